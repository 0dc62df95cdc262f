//! Binary checkpoint format.
//!
//! ```text
//! "DIVATTN1"                       8-byte magic
//! u64 little-endian                manifest length in bytes
//! manifest                         UTF-8 JSON: version, configs, vocab, tensor directory
//! payload                          raw little-endian f64 tensors in directory order
//! ```
//!
//! Directory offsets are byte offsets from the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, OutputParams};
use crate::encoders::{EmbeddingTable, LstmParams, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, TaskArity};
use crate::tensor::Tensor;
use crate::training::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"DIVATTN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_config: ModelConfig,
    train_config: Option<TrainConfig>,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// A model plus the training configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: Option<TrainConfig>,
}

pub fn encode_checkpoint(model: &Model, train_config: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, t) in model.named_params() {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_config: model.config,
        train_config: train_config.cloned(),
        vocab: model.vocab().tokens().to_vec(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn skeleton(config: ModelConfig, vocab: Vocab) -> Model {
    let (d1, d2, da) = (config.embed_dim, config.hidden_dim, config.attention_dim);
    let pair = config.arity == TaskArity::Pair;
    Model {
        config,
        embedding: EmbeddingTable {
            vectors: Tensor::zeros(&[vocab.len(), d1]),
            vocab,
        },
        encoder_p: LstmParams::zeros(d1, d2),
        encoder_q: pair.then(|| LstmParams::zeros(d1, d2)),
        attention: AttentionParams::zeros(d2, da, pair),
        output: OutputParams {
            w_o: Tensor::zeros(&[config.classes, d2]),
        },
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 {
        return Err(bad("truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("magic mismatch"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json_end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..json_end]).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file has {}, expected {FORMAT_VERSION}",
            manifest.format_version
        )));
    }
    manifest.model_config.validate()?;
    let payload = &bytes[json_end..];
    let vocab = Vocab::from_list(manifest.vocab)?;
    let mut model = skeleton(manifest.model_config, vocab);
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, directory lists {}",
            names.len(),
            manifest.tensors.len()
        )));
    }
    let mut expected_offset = 0u64;
    for ((slot, name), entry) in model.params_mut().into_iter().zip(&names).zip(&manifest.tensors) {
        if &entry.name != name || entry.shape != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match expected {name} {:?}",
                entry.name,
                entry.shape,
                slot.shape()
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::Checkpoint(format!(
                "tensor {name} at unexpected offset {}",
                entry.offset
            )));
        }
        let start = entry.offset as usize;
        let end = start + 8 * slot.len();
        if end > payload.len() {
            return Err(bad("truncated payload"));
        }
        for (x, chunk) in slot.data_mut().iter_mut().zip(payload[start..end].chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        expected_offset = end as u64;
    }
    if expected_offset as usize != payload.len() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(Checkpoint {
        model,
        train_config: manifest.train_config,
    })
}

pub fn save_checkpoint(model: &Model, train_config: Option<&TrainConfig>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, train_config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
