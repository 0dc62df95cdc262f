//! JSONL datasets.
//!
//! One object per line:
//! `{"id": str, "tokens": [str], "query_tokens": [str]?, "pos": [str]?, "label": int}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::Vocab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<String>>,
    pub label: usize,
}

impl Example {
    pub fn new(id: impl Into<String>, tokens: &[&str], label: usize) -> Self {
        Example {
            id: id.into(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            query_tokens: None,
            pos: None,
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("empty token list".into());
        }
        if let Some(q) = &self.query_tokens {
            if q.is_empty() {
                return Err("empty query_tokens list".into());
            }
        }
        if let Some(pos) = &self.pos {
            if pos.len() != self.tokens.len() {
                return Err(format!("pos has {} tags for {} tokens", pos.len(), self.tokens.len()));
            }
        }
        Ok(())
    }
}

/// Reads and validates one JSONL split.
pub fn read_examples(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Dataset {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?;
        ex.validate().map_err(|m| bad(i + 1, m))?;
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(bad(0, "no examples".into()));
    }
    Ok(examples)
}

pub fn write_examples(path: &Path, examples: &[Example]) -> Result<()> {
    let mut out = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

/// Train/validation/test splits with a vocabulary built from training tokens.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab: Vocab,
    pub num_classes: usize,
}

impl Dataset {
    pub fn from_splits(train: Vec<Example>, val: Vec<Example>, test: Vec<Example>) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument("train and val splits must be non-empty".into()));
        }
        let vocab = build_vocab(&train);
        let max_label = train
            .iter()
            .chain(&val)
            .chain(&test)
            .map(|e| e.label)
            .max()
            .unwrap_or(0);
        Ok(Dataset {
            train,
            val,
            test,
            vocab,
            num_classes: (max_label + 1).max(2),
        })
    }

    pub fn split(&self, name: &str) -> Option<&[Example]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn is_pair(&self) -> bool {
        self.train.iter().any(|e| e.query_tokens.is_some())
    }
}

/// Vocabulary over passage and query tokens of `train`, in first-seen order.
pub fn build_vocab(train: &[Example]) -> Vocab {
    Vocab::from_tokens(train.iter().flat_map(|e| {
        e.tokens
            .iter()
            .chain(e.query_tokens.iter().flatten())
            .map(String::as_str)
    }))
}

/// Loads `train.jsonl`, `val.jsonl` and `test.jsonl` from `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let train = read_examples(&split_path(dir, "train"))?;
    let val = read_examples(&split_path(dir, "val"))?;
    let test = read_examples(&split_path(dir, "test"))?;
    Dataset::from_splits(train, val, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_minimal_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.jsonl",
            "{\"id\":\"1\",\"tokens\":[\"good\",\"movie\"],\"label\":1}\n",
        );
        let ex = read_examples(&p).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].len(), 2);
        assert_eq!(ex[0].label, 1);
        assert!(ex[0].pos.is_none());
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.jsonl", "");
        assert!(read_examples(&p).is_err());
    }

    #[test]
    fn pos_mismatch_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = "{\"id\":\"1\",\"tokens\":[\"a\"],\"label\":0}\n{\"id\":\"2\",\"tokens\":[\"a\",\"b\"],\"pos\":[\"DET\"],\"label\":0}\n";
        let p = write(dir.path(), "a.jsonl", body);
        match read_examples(&p).unwrap_err() {
            Error::Dataset { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = "{\"id\":\"1\",\"tokens\":[\"a\"],\"label\":0}\n\n{\"id\":\"2\",\"tokens\":\n";
        let p = write(dir.path(), "a.jsonl", body);
        assert!(matches!(read_examples(&p).unwrap_err(), Error::Dataset { line: 3, .. }));
    }

    #[test]
    fn vocab_comes_from_train_only() {
        let train = vec![Example::new("1", &["good", "movie"], 1)];
        let val = vec![Example::new("2", &["bad", "movie"], 0)];
        let ds = Dataset::from_splits(train, val, vec![]).unwrap();
        assert_eq!(ds.vocab.len(), 4);
        assert_eq!(ds.vocab.id("bad"), crate::encoders::OOV_INDEX);
        assert_eq!(ds.num_classes, 2);
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut ex = Example::new("x", &["where", "is", "mary"], 3);
        ex.query_tokens = Some(vec!["mary".into()]);
        ex.pos = Some(vec!["ADV".into(), "VERB".into(), "PROPN".into()]);
        let p = dir.path().join("s.jsonl");
        write_examples(&p, &[ex.clone()]).unwrap();
        assert_eq!(read_examples(&p).unwrap(), vec![ex]);
    }
}
