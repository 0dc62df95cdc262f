//! Extractive rationales: a recurrent policy picks a token subset that keeps
//! the frozen classifier's prediction while staying short.
//!
//! The policy reads the classifier's embeddings, runs its own LSTM and emits
//! one Bernoulli keep-probability per token. It is trained with REINFORCE on
//! the reward `R = p_model(y | Z) − alpha_r · |Z|/m`, where dropped tokens are
//! removed from the input before the classifier sees it.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{embed_on_tape, encode_sequence, CellKind, LstmParams};
use crate::error::{Error, Result};
use crate::faithfulness::metrics::mean;
use crate::model::{Model, ModelInput};
use crate::rng::stream;
use crate::tensor::{Tape, Tensor, Var};
use crate::training::adam::{adam_step, clip_global_norm, AdamState};
use crate::training::Example;

pub const POLICY_HIDDEN: usize = 32;
/// Initial head bias; `sigmoid(3) ≈ 0.95`, so training starts near keep-all.
pub const INITIAL_KEEP_BIAS: f64 = 3.0;
const BASELINE_DECAY: f64 = 0.9;
const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleConfig {
    pub alpha_r: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RationaleConfig {
    fn default() -> Self {
        RationaleConfig {
            alpha_r: 0.3,
            epochs: 10,
            lr: 0.01,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationalePolicy {
    pub lstm: LstmParams,
    pub w: Tensor,
    pub b: Tensor,
    pub alpha_r: f64,
}

/// `R = p − alpha_r · kept_fraction`.
pub fn reward(p_label: f64, kept_fraction: f64, alpha_r: f64) -> f64 {
    p_label - alpha_r * kept_fraction
}

impl RationalePolicy {
    pub fn random(embed_dim: usize, alpha_r: f64, rng: &mut impl Rng) -> Self {
        let lstm = LstmParams::random(embed_dim, POLICY_HIDDEN, rng);
        let bound = 1.0 / (POLICY_HIDDEN as f64).sqrt();
        let w = Tensor::vector((0..POLICY_HIDDEN).map(|_| rng.random_range(-bound..bound)).collect());
        RationalePolicy {
            lstm,
            w,
            b: Tensor::scalar(INITIAL_KEEP_BIAS),
            alpha_r,
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.lstm.tensors_mut().into_iter().collect();
        out.push(&mut self.w);
        out.push(&mut self.b);
        out
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.lstm.tensors().iter().map(|t| t.shape().to_vec()).collect();
        out.push(self.w.shape().to_vec());
        out.push(self.b.shape().to_vec());
        out
    }

    /// Per-token keep logits on `tape`, reading `model`'s embeddings as constants.
    fn logits<'t>(
        &self,
        tape: &'t Tape,
        model: &Model,
        ids: &[usize],
        trainable: bool,
    ) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>)> {
        let table = tape.constant(model.embedding.vectors.clone());
        let xs = embed_on_tape(table, ids)?;
        let lstm = self.lstm.bind(tape, trainable);
        let put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let (w, b) = (put(&self.w), put(&self.b));
        let hidden = encode_sequence(tape, &xs, &lstm, CellKind::Vanilla)?;
        let logits = hidden.iter().map(|h| w.dot(*h)?.add(b)).collect::<Result<Vec<_>>>()?;
        let mut params: Vec<Var<'t>> = lstm.vars().into_iter().collect();
        params.push(w);
        params.push(b);
        Ok((logits, params))
    }

    pub fn keep_probabilities(&self, model: &Model, ids: &[usize]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let (logits, _) = self.logits(&tape, model, ids, false)?;
        logits.iter().map(|s| Ok(s.sigmoid()?.item())).collect()
    }

    /// Greedy rationale: positions with keep-probability above one half.
    pub fn rationale(&self, model: &Model, ids: &[usize]) -> Result<Vec<bool>> {
        Ok(self
            .keep_probabilities(model, ids)?
            .into_iter()
            .map(|p| p > 0.5)
            .collect())
    }
}

/// Probability of `label` given only the kept passage tokens; zero when nothing is kept.
pub fn rationale_probability(model: &Model, input: &ModelInput, keep: &[bool], label: usize) -> Result<f64> {
    let ids: Vec<usize> = input
        .ids
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .map(|(id, _)| *id)
        .collect();
    if ids.is_empty() {
        return Ok(0.0);
    }
    let p = model.forward(&ModelInput {
        ids,
        query_ids: input.query_ids.clone(),
    })?;
    Ok(p.y_hat[label])
}

struct Sample {
    reward: f64,
    kept_fraction: f64,
    grads: Vec<Tensor>,
}

/// Samples a mask, scores it and returns `∇ Σ_t log π(z_t)` for the policy.
fn sample(policy: &RationalePolicy, model: &Model, ex: &Example, rng: &mut impl Rng) -> Result<Sample> {
    let input = model.input(ex);
    let tape = Tape::new();
    let (logits, params) = policy.logits(&tape, model, &input.ids, true)?;
    let mut keep = Vec::with_capacity(logits.len());
    let mut log_prob: Option<Var<'_>> = None;
    for s in &logits {
        let p = s.sigmoid()?.item();
        let z = rng.random_bool(p.clamp(0.0, 1.0));
        keep.push(z);
        let term = if z {
            s.sigmoid()?.log()?
        } else {
            s.scale(-1.0)?.sigmoid()?.log()?
        };
        log_prob = Some(match log_prob {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    let log_prob = log_prob.ok_or_else(|| Error::InvalidArgument(format!("example {} is empty", ex.id)))?;
    let kept_fraction = keep.iter().filter(|k| **k).count() as f64 / keep.len() as f64;
    let r = reward(
        rationale_probability(model, &input, &keep, ex.label)?,
        kept_fraction,
        policy.alpha_r,
    );
    if !r.is_finite() {
        return Err(Error::NonFinite { op: "rationale_reward" });
    }
    let grads = tape.backward(log_prob)?;
    Ok(Sample {
        reward: r,
        kept_fraction,
        grads: params.iter().map(|v| grads.wrt(*v)).collect(),
    })
}

/// Per-epoch mean reward and kept fraction during policy training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEpoch {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_kept: f64,
}

/// REINFORCE with a moving-average reward baseline; `model` stays frozen.
pub fn train_rationale_policy(
    model: &Model,
    examples: &[Example],
    config: &RationaleConfig,
) -> Result<(RationalePolicy, Vec<PolicyEpoch>)> {
    if !(config.alpha_r >= 0.0) || config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("bad rationale config {config:?}")));
    }
    if examples.is_empty() {
        return Err(Error::InvalidArgument(
            "no examples to train the rationale policy on".into(),
        ));
    }
    let mut policy = RationalePolicy::random(
        model.config.embed_dim,
        config.alpha_r,
        &mut stream(config.seed, &["rationale-init"]),
    );
    let shapes = policy.shapes();
    let mut adam = AdamState::new(shapes.iter().map(|s| s.as_slice()));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle = stream(config.seed, &["rationale-shuffle"]);
    let mut baseline: Option<f64> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let (mut reward_sum, mut kept_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let epoch_tag = epoch.to_string();
            let samples: Vec<Sample> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &examples[i];
                    sample(
                        &policy,
                        model,
                        ex,
                        &mut stream(config.seed, &["rationale-sample", &epoch_tag, &ex.id]),
                    )
                })
                .collect::<Result<_>>()?;
            let batch_mean = samples.iter().map(|s| s.reward).sum::<f64>() / samples.len() as f64;
            let b = *baseline.get_or_insert(batch_mean);
            // Ascent on E[R]: descend on −(R − b) ∇ log π.
            let mut grads: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            for s in &samples {
                let coef = -(s.reward - b) / samples.len() as f64;
                for (acc, g) in grads.iter_mut().zip(&s.grads) {
                    acc.data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, g)| *a += coef * g);
                }
                reward_sum += s.reward;
                kept_sum += s.kept_fraction;
            }
            clip_global_norm(&mut grads, CLIP_NORM);
            adam_step(&mut policy.params_mut(), &grads, &mut adam, config.lr)?;
            baseline = Some(BASELINE_DECAY * b + (1.0 - BASELINE_DECAY) * batch_mean);
        }
        history.push(PolicyEpoch {
            epoch,
            mean_reward: reward_sum / examples.len() as f64,
            mean_kept: kept_sum / examples.len() as f64,
        });
    }
    Ok((policy, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub id: String,
    /// Attention mass on the rationale; `None` for an empty rationale.
    pub attention: Option<f64>,
    pub length: Option<f64>,
    /// Whether the classifier is right on the rationale alone (false when empty).
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleSummary {
    pub records: Vec<RationaleRecord>,
    pub mean_attention: Option<f64>,
    pub mean_length: Option<f64>,
    pub missing: usize,
    pub rationale_accuracy: f64,
    pub full_accuracy: f64,
}

pub fn rationale_record(model: &Model, policy: &RationalePolicy, ex: &Example) -> Result<(RationaleRecord, bool)> {
    let input = model.input(ex);
    let full = model.forward(&input)?;
    let keep = policy.rationale(model, &input.ids)?;
    let kept = keep.iter().filter(|k| **k).count();
    let record = if kept == 0 {
        RationaleRecord {
            id: ex.id.clone(),
            attention: None,
            length: None,
            correct: false,
        }
    } else {
        let ids: Vec<usize> = input
            .ids
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(id, _)| *id)
            .collect();
        let p = model.forward(&ModelInput {
            ids,
            query_ids: input.query_ids.clone(),
        })?;
        RationaleRecord {
            id: ex.id.clone(),
            attention: Some(full.alpha.iter().zip(&keep).filter(|(_, k)| **k).map(|(a, _)| a).sum()),
            length: Some(kept as f64 / keep.len() as f64),
            correct: p.class() == ex.label,
        }
    };
    Ok((record, full.class() == ex.label))
}

pub fn summarize_rationales(records: Vec<(RationaleRecord, bool)>) -> RationaleSummary {
    let n = records.len().max(1) as f64;
    let full_accuracy = records.iter().filter(|(_, ok)| *ok).count() as f64 / n;
    let records: Vec<RationaleRecord> = records.into_iter().map(|(r, _)| r).collect();
    let att: Vec<f64> = records.iter().filter_map(|r| r.attention).collect();
    let len: Vec<f64> = records.iter().filter_map(|r| r.length).collect();
    RationaleSummary {
        mean_attention: mean(&att),
        mean_length: mean(&len),
        missing: records.len() - att.len(),
        rationale_accuracy: records.iter().filter(|r| r.correct).count() as f64 / n,
        full_accuracy,
        records,
    }
}

/// Attention the model places on each greedy rationale, with rationale length
/// and rationale-only accuracy.
pub fn rationale_attention(model: &Model, policy: &RationalePolicy, examples: &[Example]) -> Result<RationaleSummary> {
    let records = examples
        .par_iter()
        .map(|ex| rationale_record(model, policy, ex))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_rationales(records))
}
