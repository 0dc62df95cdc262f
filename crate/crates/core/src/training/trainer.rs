use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{CellKind, EmbeddingTable, PAD_INDEX};
use crate::error::{Error, Result};
use crate::geometry::{conicity, guarded_conicity, VectorSet};
use crate::model::{Model, ModelConfig, ModelInput, Overrides, TaskArity};
use crate::rng::stream;
use crate::tensor::{Tape, Tensor, Var};
use crate::training::adam::{adam_step, clip_global_norm, AdamState};
use crate::training::data::{build_vocab, Example};

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_EPOCHS: usize = 20;
pub const CLIP_NORM: f64 = 5.0;

/// Training hyperparameters. `lambda = 0` gives plain NLL training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub cell: CellKind,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Defaults to `hidden_dim / 2` when absent.
    pub attention_dim: Option<usize>,
    pub arity: TaskArity,
    /// Optional `word v1 .. v_d` embedding file.
    pub embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cell: CellKind::Vanilla,
            lambda: DEFAULT_LAMBDA,
            lr: DEFAULT_LR,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            embed_dim: 32,
            hidden_dim: 32,
            attention_dim: None,
            arity: TaskArity::Single,
            embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn attention_dim(&self) -> usize {
        self.attention_dim.unwrap_or((self.hidden_dim / 2).max(1))
    }

    pub fn model_config(&self, classes: usize) -> ModelConfig {
        ModelConfig {
            cell: self.cell,
            arity: self.arity,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            attention_dim: self.attention_dim(),
            classes,
        }
    }
}

/// `−log ŷ[y] + λ·conicity(H)` from output logits and passage hidden states.
///
/// The conicity term uses a `+1e-8` guard on each cosine denominator. With
/// `lambda == 0` no conicity nodes are recorded.
pub fn diversity_loss<'t>(
    tape: &'t Tape,
    label: usize,
    logits: Var<'t>,
    hidden: &[Var<'t>],
    lambda: f64,
) -> Result<Var<'t>> {
    let nll = logits.cross_entropy(label)?;
    if lambda == 0.0 {
        return Ok(nll);
    }
    let c = guarded_conicity(tape, hidden)?;
    nll.add(c.scale(lambda)?)
}

/// Loss and gradients for one example, in [`Model::named_params`] order.
pub fn example_gradients(model: &Model, input: &ModelInput, label: usize, lambda: f64) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let bound = model.bind(&tape, true);
    let trace = bound.run(input, Overrides::default())?;
    let loss = diversity_loss(&tape, label, trace.logits, &trace.hidden, lambda)?;
    let grads = tape.backward(loss)?;
    let value = loss.item();
    Ok((value, bound.vars().into_iter().map(|v| grads.wrt(v)).collect()))
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_conicity: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_acc,val_conicity\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_acc, r.val_conicity);
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Accuracy and mean hidden-state conicity of `model` on `examples`.
pub fn evaluate(model: &Model, examples: &[Example]) -> Result<(f64, f64)> {
    let results: Vec<(bool, Option<f64>)> = examples
        .par_iter()
        .map(|ex| {
            let p = model.forward_example(ex)?;
            let c = VectorSet::new(p.hidden.clone()).and_then(|s| conicity(&s)).ok();
            Ok((p.class() == ex.label, c))
        })
        .collect::<Result<_>>()?;
    let correct = results.iter().filter(|(ok, _)| *ok).count();
    let cons: Vec<f64> = results.iter().filter_map(|(_, c)| *c).collect();
    let mean_con = if cons.is_empty() {
        f64::NAN
    } else {
        cons.iter().sum::<f64>() / cons.len() as f64
    };
    Ok((correct as f64 / examples.len() as f64, mean_con))
}

fn initial_model(config: &TrainConfig, train: &[Example], val: &[Example]) -> Result<Model> {
    let vocab = build_vocab(train);
    let classes = train.iter().chain(val).map(|e| e.label).max().unwrap_or(0) + 1;
    let model_config = config.model_config(classes.max(2));
    let mut rng = stream(config.seed, &["init"]);
    let embedding = match &config.embeddings {
        Some(path) => EmbeddingTable::load_text(path, vocab, config.embed_dim, &mut rng)?,
        None => EmbeddingTable::random(vocab, config.embed_dim, &mut rng),
    };
    Model::new(model_config, embedding, &mut rng)
}

/// Mini-batch Adam training with best-validation-accuracy model selection.
///
/// Batches are visited in a seeded shuffle order; per-example gradients are
/// reduced in batch order, so two runs with the same seed are bit-identical.
pub fn train(config: &TrainConfig, train: &[Example], val: &[Example]) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("train and val splits must be non-empty".into()));
    }
    let mut model = initial_model(config, train, val)?;
    let inputs: Vec<ModelInput> = train.iter().map(|e| model.input(e)).collect();
    let mut adam = AdamState::new(model.named_params().iter().map(|(_, t)| t.shape()));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = stream(config.seed, &["shuffle"]);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let per_example: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .map(|&i| example_gradients(&model, &inputs[i], train[i].label, config.lambda))
                .collect();
            let mut sum: Option<Vec<Tensor>> = None;
            for r in per_example {
                let (loss, grads) = r.map_err(|e| Error::Diverged {
                    epoch,
                    step,
                    reason: e.to_string(),
                    history: history.clone(),
                })?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        reason: format!("loss {loss}"),
                        history: history.clone(),
                    });
                }
                loss_sum += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            // Padding row of the embedding table is never trained.
            let dim = model.config.embed_dim;
            grads[0].data_mut()[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(0.0);
            clip_global_norm(&mut grads, CLIP_NORM);
            adam_step(&mut model.params_mut(), &grads, &mut adam, config.lr)?;
        }
        let (val_acc, val_conicity) = evaluate(&model, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_acc,
            val_conicity,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) {
            best = Some((val_acc, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Vocab;
    use crate::gradcheck::{finite_difference_check, DEFAULT_EPSILON};
    use crate::training::synth::{split_examples, synth_generate, SynthTask};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(cell: CellKind, seed: u64) -> Model {
        let vocab = Vocab::from_tokens(["a", "b", "c", "d"]);
        let config = ModelConfig {
            cell,
            arity: TaskArity::Single,
            embed_dim: 4,
            hidden_dim: 4,
            attention_dim: 2,
            classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Model::random(config, vocab, &mut rng).unwrap();
        m.embedding.vectors = m.embedding.vectors.map(|x| 8.0 * x);
        m
    }

    fn loss_of(model: &Model, input: &ModelInput, label: usize, lambda: f64) -> Result<f64> {
        let tape = Tape::new();
        let trace = model.bind(&tape, false).run(input, Overrides::default())?;
        Ok(diversity_loss(&tape, label, trace.logits, &trace.hidden, lambda)?.item())
    }

    #[test]
    fn lambda_zero_is_plain_nll() {
        let m = small_model(CellKind::Vanilla, 1);
        let input = ModelInput {
            ids: vec![2, 3, 4, 5],
            query_ids: None,
        };
        let p = m.forward(&input).unwrap();
        let nll = loss_of(&m, &input, 1, 0.0).unwrap();
        assert!((nll + p.y_hat[1].ln()).abs() < 1e-12);
        let tape = Tape::new();
        let trace = m.bind(&tape, false).run(&input, Overrides::default()).unwrap();
        let before = tape.len();
        diversity_loss(&tape, 1, trace.logits, &trace.hidden, 0.0).unwrap();
        assert_eq!(tape.len(), before + 1);
    }

    #[test]
    fn single_state_adds_lambda() {
        let m = small_model(CellKind::Vanilla, 2);
        let input = ModelInput {
            ids: vec![3],
            query_ids: None,
        };
        let nll = loss_of(&m, &input, 0, 0.0).unwrap();
        let reg = loss_of(&m, &input, 0, 0.7).unwrap();
        assert!((reg - nll - 0.7).abs() < 1e-6);
    }

    #[test]
    fn loss_decomposes_into_lambda_times_conicity() {
        let m = small_model(CellKind::Vanilla, 3);
        let input = ModelInput {
            ids: vec![2, 5, 3, 4],
            query_ids: None,
        };
        let tape = Tape::new();
        let trace = m.bind(&tape, false).run(&input, Overrides::default()).unwrap();
        let c = guarded_conicity(&tape, &trace.hidden).unwrap().item();
        let exact = conicity(&VectorSet::new(trace.prediction().unwrap().hidden).unwrap()).unwrap();
        assert!((c - exact).abs() < 1e-6);
        for lambda in [0.1, 0.5, 2.0] {
            let diff = loss_of(&m, &input, 1, lambda).unwrap() - loss_of(&m, &input, 1, 0.0).unwrap();
            assert!((diff - lambda * c).abs() < 1e-12);
        }
    }

    #[test]
    fn diversity_loss_gradient_matches_finite_differences() {
        for cell in [CellKind::Vanilla, CellKind::Orthogonal] {
            let m = small_model(cell, 4);
            let input = ModelInput {
                ids: vec![2, 4, 3, 5],
                query_ids: None,
            };
            let (_, grads) = example_gradients(&m, &input, 1, 0.5).unwrap();
            let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
            let err = finite_difference_check(
                |v| {
                    let mut probe = m.clone();
                    probe.set_flat_params(v)?;
                    loss_of(&probe, &input, 1, 0.5)
                },
                &analytic,
                &m.flat_params(),
                DEFAULT_EPSILON,
            )
            .unwrap();
            assert!(err < 1e-4, "{cell}: {err}");
        }
    }

    #[test]
    fn history_csv_format() {
        let h = vec![EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_acc: 0.75,
            val_conicity: 0.25,
        }];
        assert_eq!(
            history_csv(&h),
            "epoch,train_loss,val_acc,val_conicity\n1,0.5,0.75,0.25\n"
        );
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.attention_dim(), 16);
        c.lr = 0.0;
        assert!(c.validate().is_err());
        c.lr = 0.001;
        c.lambda = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let (train_set, val, _) = split_examples(synth_generate(SynthTask::Keyword, 60, 5).unwrap());
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            embed_dim: 6,
            hidden_dim: 6,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&config, &train_set, &val).unwrap();
        let b = train(&config, &train_set, &val).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.model.embedding.vectors.row(PAD_INDEX), &[0.0; 6]);
    }
}
