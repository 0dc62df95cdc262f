//! Classifier assembly: embeddings → LSTM encoder(s) → additive attention →
//! `softmax(W_o c_α)`.
//!
//! Single-sequence tasks use query-free attention. Pair tasks encode the
//! query with a second LSTM and use its last hidden state as the attention
//! query.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_scores, context_vector, AttentionParams, AttentionVars, OutputParams};
use crate::encoders::{embed_on_tape, encode_sequence, CellKind, EmbeddingTable, LstmParams, LstmVars, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{softmax, Tape, Tensor, Var};
use crate::training::data::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskArity {
    Single,
    Pair,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub arity: TaskArity,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.attention_dim == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable,
    pub encoder_p: LstmParams,
    pub encoder_q: Option<LstmParams>,
    pub attention: AttentionParams,
    pub output: OutputParams,
}

/// Token ids for one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub ids: Vec<usize>,
    pub query_ids: Option<Vec<usize>>,
}

/// Optional interventions on a forward pass.
///
/// `erase[t] == true` removes hidden state `t` from the attention computation.
/// `alpha`, when given, replaces the attention distribution verbatim; it has
/// one entry per position and must put zero mass on erased positions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides<'a> {
    pub alpha: Option<&'a [f64]>,
    pub erase: Option<&'a [bool]>,
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub y_hat: Vec<f64>,
    /// One weight per position; erased positions carry zero.
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    /// `m × d2` passage hidden states.
    pub hidden: Tensor,
}

impl Prediction {
    pub fn class(&self) -> usize {
        argmax(&self.y_hat)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Model {
    pub fn new(config: ModelConfig, embedding: EmbeddingTable, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if embedding.dim() != config.embed_dim {
            return Err(Error::shape(
                "model",
                format!("embedding dim {} vs configured {}", embedding.dim(), config.embed_dim),
            ));
        }
        let pair = config.arity == TaskArity::Pair;
        let encoder_p = LstmParams::random(config.embed_dim, config.hidden_dim, rng);
        let encoder_q = pair.then(|| LstmParams::random(config.embed_dim, config.hidden_dim, rng));
        let attention = AttentionParams::random(config.hidden_dim, config.attention_dim, pair, rng);
        let output = OutputParams::random(config.classes, config.hidden_dim, rng);
        Ok(Model {
            config,
            embedding,
            encoder_p,
            encoder_q,
            attention,
            output,
        })
    }

    /// Random model with freshly initialized embeddings for `vocab`.
    pub fn random(config: ModelConfig, vocab: Vocab, rng: &mut impl Rng) -> Result<Self> {
        let embedding = EmbeddingTable::random(vocab, config.embed_dim, rng);
        Model::new(config, embedding, rng)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.embedding.vocab
    }

    pub fn input(&self, ex: &Example) -> ModelInput {
        let vocab = self.vocab();
        ModelInput {
            ids: vocab.ids(&ex.tokens),
            query_ids: ex.query_tokens.as_ref().map(|q| vocab.ids(q)),
        }
    }

    /// Parameter tensors with stable names, in binding order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding.vectors)];
        for (name, t) in LstmParams::NAMES.iter().zip(self.encoder_p.tensors()) {
            out.push((format!("encoder_p.{name}"), t));
        }
        if let Some(q) = &self.encoder_q {
            for (name, t) in LstmParams::NAMES.iter().zip(q.tensors()) {
                out.push((format!("encoder_q.{name}"), t));
            }
        }
        out.push(("attention.W1".into(), &self.attention.w1));
        if let Some(w2) = &self.attention.w2 {
            out.push(("attention.W2".into(), w2));
        }
        out.push(("attention.b".into(), &self.attention.b));
        out.push(("attention.v".into(), &self.attention.v));
        out.push(("output.W_o".into(), &self.output.w_o));
        out
    }

    /// Mutable parameters in the same order as [`Model::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding.vectors];
        out.extend(self.encoder_p.tensors_mut());
        if let Some(q) = &mut self.encoder_q {
            out.extend(q.tensors_mut());
        }
        out.push(&mut self.attention.w1);
        if let Some(w2) = &mut self.attention.w2 {
            out.push(w2);
        }
        out.push(&mut self.attention.b);
        out.push(&mut self.attention.v);
        out.push(&mut self.output.w_o);
        out
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.named_params()
            .into_iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.named_params().iter().map(|(_, t)| t.len()).sum();
        if total != values.len() {
            return Err(Error::shape(
                "set_flat_params",
                format!("{} values for {total} parameters", values.len()),
            ));
        }
        let mut off = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Places the parameters on `tape`; leaves when `trainable`, constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundModel<'t> {
        let put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundModel {
            tape,
            config: self.config,
            embedding: put(&self.embedding.vectors),
            encoder_p: self.encoder_p.bind(tape, trainable),
            encoder_q: self.encoder_q.as_ref().map(|q| q.bind(tape, trainable)),
            attention: self.attention.bind(tape, trainable),
            w_o: put(&self.output.w_o),
        }
    }

    pub fn forward(&self, input: &ModelInput) -> Result<Prediction> {
        self.forward_with_overrides(input, Overrides::default())
    }

    pub fn forward_with_overrides(&self, input: &ModelInput, overrides: Overrides<'_>) -> Result<Prediction> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        bound.run(input, overrides)?.prediction()
    }

    pub fn forward_example(&self, ex: &Example) -> Result<Prediction> {
        self.forward(&self.input(ex))
    }
}

/// A [`Model`] whose parameters live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundModel<'t> {
    pub tape: &'t Tape,
    pub config: ModelConfig,
    pub embedding: Var<'t>,
    pub encoder_p: LstmVars<'t>,
    pub encoder_q: Option<LstmVars<'t>>,
    pub attention: AttentionVars<'t>,
    pub w_o: Var<'t>,
}

/// Every intermediate of one forward pass that later analyses need.
#[derive(Debug, Clone)]
pub struct Trace<'t> {
    /// Passage input vectors (embeddings or substitutes).
    pub inputs: Vec<Var<'t>>,
    pub hidden: Vec<Var<'t>>,
    pub query_state: Option<Var<'t>>,
    /// Positions that took part in attention.
    pub kept: Vec<usize>,
    /// Attention over `kept`, in that order.
    pub alpha: Var<'t>,
    pub context: Var<'t>,
    pub logits: Var<'t>,
    pub y_hat: Var<'t>,
}

impl<'t> Trace<'t> {
    pub fn prediction(&self) -> Result<Prediction> {
        let tape = self.alpha.tape();
        let mut alpha = vec![0.0; self.hidden.len()];
        let kept_alpha = self.alpha.value();
        for (&t, &a) in self.kept.iter().zip(kept_alpha.data()) {
            alpha[t] = a;
        }
        Ok(Prediction {
            y_hat: self.y_hat.value().into_data(),
            alpha,
            context: self.context.value().into_data(),
            hidden: tape.stack(&self.hidden)?.value(),
        })
    }
}

impl<'t> BoundModel<'t> {
    /// Parameter handles in [`Model::named_params`] order.
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = vec![self.embedding];
        out.extend(self.encoder_p.vars());
        if let Some(q) = &self.encoder_q {
            out.extend(q.vars());
        }
        out.push(self.attention.w1);
        if let Some(w2) = self.attention.w2 {
            out.push(w2);
        }
        out.push(self.attention.b);
        out.push(self.attention.v);
        out.push(self.w_o);
        out
    }

    pub fn run(&self, input: &ModelInput, overrides: Overrides<'_>) -> Result<Trace<'t>> {
        let inputs = embed_on_tape(self.embedding, &input.ids)?;
        self.run_embedded(inputs, input.query_ids.as_deref(), overrides)
    }

    /// Forward pass from explicit passage input vectors.
    pub fn run_embedded(
        &self,
        inputs: Vec<Var<'t>>,
        query_ids: Option<&[usize]>,
        overrides: Overrides<'_>,
    ) -> Result<Trace<'t>> {
        let tape = self.tape;
        let query_state = match (query_ids, &self.encoder_q) {
            (Some(q), Some(enc)) => {
                let xs = embed_on_tape(self.embedding, q)?;
                encode_sequence(tape, &xs, enc, self.config.cell)?.last().copied()
            }
            (None, None) => None,
            (Some(_), None) => {
                return Err(Error::InvalidArgument(
                    "query tokens given to a single-sequence model".into(),
                ))
            }
            (None, Some(_)) => return Err(Error::InvalidArgument("pair model needs query tokens".into())),
        };
        let hidden = encode_sequence(tape, &inputs, &self.encoder_p, self.config.cell)?;
        let m = hidden.len();

        let kept: Vec<usize> = match overrides.erase {
            Some(mask) => {
                if mask.len() != m {
                    return Err(Error::shape(
                        "erase_mask",
                        format!("{} flags for {m} positions", mask.len()),
                    ));
                }
                (0..m).filter(|&t| !mask[t]).collect()
            }
            None => (0..m).collect(),
        };
        if kept.is_empty() {
            return Err(Error::InvalidArgument("every position is erased".into()));
        }
        let kept_hidden: Vec<Var<'t>> = kept.iter().map(|&t| hidden[t]).collect();

        let alpha = match overrides.alpha {
            Some(weights) => tape.constant(Tensor::vector(validate_override(weights, m, &kept)?)),
            None => attention_scores(tape, &kept_hidden, query_state, &self.attention)?.softmax()?,
        };
        let context = context_vector(alpha, &kept_hidden)?;
        let logits = self.w_o.matmul(context)?;
        let y_hat = logits.softmax()?;
        Ok(Trace {
            inputs,
            hidden,
            query_state,
            kept,
            alpha,
            context,
            logits,
            y_hat,
        })
    }
}

const OVERRIDE_TOLERANCE: f64 = 1e-6;

fn validate_override(weights: &[f64], m: usize, kept: &[usize]) -> Result<Vec<f64>> {
    if weights.len() != m {
        return Err(Error::shape(
            "alpha_override",
            format!("{} weights for {m} positions", weights.len()),
        ));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(
            "alpha override has negative or non-finite weights".into(),
        ));
    }
    let kept_mass: f64 = kept.iter().map(|&t| weights[t]).sum();
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > OVERRIDE_TOLERANCE {
        return Err(Error::InvalidArgument(format!("alpha override sums to {total}")));
    }
    if (kept_mass - total).abs() > OVERRIDE_TOLERANCE {
        return Err(Error::InvalidArgument(
            "alpha override puts mass on erased positions".into(),
        ));
    }
    Ok(kept.iter().map(|&t| weights[t]).collect())
}

/// `softmax(W_o · context)` computed off-tape.
pub fn output_distribution(w_o: &Tensor, context: &[f64]) -> Result<Vec<f64>> {
    let logits: Vec<f64> = (0..w_o.rows())
        .map(|i| {
            let mut acc = 0.0;
            for (w, c) in w_o.row(i).iter().zip(context) {
                acc += w * c;
            }
            acc
        })
        .collect();
    softmax(&logits)
}
