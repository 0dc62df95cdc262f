//! Decision-flip erasure: remove hidden states in ranking order until the
//! predicted class changes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelInput, Overrides, Prediction};
use crate::rng::stream;
use crate::training::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    Attention,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Erasure {
    /// Erased positions over sequence length at the first flip; 1.0 without one.
    pub fraction: f64,
    pub flipped: bool,
}

/// Positions sorted by descending attention; ties keep position order.
pub fn attention_order(alpha: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]));
    order
}

/// Erases positions in `order` one at a time and reports the first flip.
pub fn erase_in_order(model: &Model, input: &ModelInput, base: &Prediction, order: &[usize]) -> Result<Erasure> {
    let m = base.alpha.len();
    if order.len() != m {
        return Err(Error::shape(
            "erasure",
            format!("order of {} for {m} positions", order.len()),
        ));
    }
    let class = base.class();
    let mut mask = vec![false; m];
    for (k, &t) in order.iter().take(m - 1).enumerate() {
        mask[t] = true;
        let p = model.forward_with_overrides(
            input,
            Overrides {
                alpha: None,
                erase: Some(&mask),
            },
        )?;
        if p.class() != class {
            return Ok(Erasure {
                fraction: (k + 1) as f64 / m as f64,
                flipped: true,
            });
        }
    }
    Ok(Erasure {
        fraction: 1.0,
        flipped: false,
    })
}

/// Fraction of hidden states erased before the decision flips.
///
/// Random orders come from a stream keyed on `seed` and the example id.
pub fn erasure_flip_fraction(model: &Model, example: &Example, ranking: Ranking, seed: u64) -> Result<Erasure> {
    let input = model.input(example);
    if input.ids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "example {} has fewer than 2 tokens",
            example.id
        )));
    }
    let base = model.forward(&input)?;
    let order = match ranking {
        Ranking::Attention => attention_order(&base.alpha),
        Ranking::Random => {
            let mut order: Vec<usize> = (0..input.ids.len()).collect();
            order.shuffle(&mut stream(seed, &["erasure", &example.id]));
            order
        }
    };
    erase_in_order(model, &input, &base, &order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{CellKind, LstmParams, Vocab};
    use crate::model::{ModelConfig, TaskArity};
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> Model {
        let vocab = Vocab::from_tokens(["a", "b", "c", "d", "e", "f"]);
        let config = ModelConfig {
            cell: CellKind::Vanilla,
            arity: TaskArity::Single,
            embed_dim: 4,
            hidden_dim: 5,
            attention_dim: 3,
            classes: 3,
        };
        let mut m = Model::random(config, vocab, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        m.embedding.vectors = m.embedding.vectors.map(|x| 15.0 * x);
        m.output.w_o = m.output.w_o.map(|x| 20.0 * x);
        m
    }

    fn example(tokens: &[&str]) -> Example {
        Example::new("x", tokens, 0)
    }

    /// One hidden unit fires only for the keyword "k", attention scores follow
    /// that unit, and the output reads it directly.
    fn keyword_model() -> Model {
        let vocab = Vocab::from_tokens(["k", "a", "b", "c"]);
        let config = ModelConfig {
            cell: CellKind::Vanilla,
            arity: TaskArity::Single,
            embed_dim: 2,
            hidden_dim: 2,
            attention_dim: 1,
            classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = Model::random(config, vocab, &mut rng).unwrap();
        let kid = m.vocab().id("k");
        let mut emb = Tensor::zeros(&[m.vocab().len(), 2]);
        for id in 2..m.vocab().len() {
            emb.data_mut()[id * 2 + 1] = 1.0;
        }
        emb.data_mut()[kid * 2] = 1.0;
        emb.data_mut()[kid * 2 + 1] = 0.0;
        m.embedding.vectors = emb;
        let mut p = LstmParams::zeros(2, 2);
        // No memory: forget gate closed, input and output gates open.
        p.b_f = Tensor::vector(vec![-50.0; 2]);
        p.b_i = Tensor::vector(vec![50.0; 2]);
        p.b_o = Tensor::vector(vec![50.0; 2]);
        p.w_c = Tensor::matrix(2, 2, vec![3.0, 0.0, 0.0, 3.0]).unwrap();
        m.encoder_p = p;
        m.attention.w1 = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        m.attention.b = Tensor::vector(vec![0.0]);
        m.attention.v = Tensor::vector(vec![8.0]);
        m.output.w_o = Tensor::matrix(2, 2, vec![-10.0, 1.0, 10.0, -1.0]).unwrap();
        m
    }

    #[test]
    fn keyword_decides_and_flips_at_first_erasure() {
        let m = keyword_model();
        let ex = example(&["a", "b", "k", "c", "a"]);
        let base = m.forward_example(&ex).unwrap();
        assert_eq!(base.class(), 1);
        assert_eq!(attention_order(&base.alpha)[0], 2);
        // Brute force over single erasures: only the keyword flips.
        let input = m.input(&ex);
        for t in 0..5 {
            let mut mask = vec![false; 5];
            mask[t] = true;
            let p = m
                .forward_with_overrides(
                    &input,
                    Overrides {
                        alpha: None,
                        erase: Some(&mask),
                    },
                )
                .unwrap();
            assert_eq!(p.class() != base.class(), t == 2);
        }
        let e = erasure_flip_fraction(&m, &ex, Ranking::Attention, 0).unwrap();
        assert_eq!(e.fraction, 1.0 / 5.0);
        assert!(e.flipped);
    }

    #[test]
    fn two_tokens_give_half_or_one() {
        for seed in 0..20 {
            let m = random_model(seed);
            for ranking in [Ranking::Attention, Ranking::Random] {
                let e = erasure_flip_fraction(&m, &example(&["a", "d"]), ranking, seed).unwrap();
                assert!(e.fraction == 0.5 || e.fraction == 1.0);
                assert_eq!(e.flipped, e.fraction == 0.5);
            }
        }
    }

    #[test]
    fn identical_states_never_flip() {
        let mut m = random_model(3);
        let d2 = m.config.hidden_dim;
        m.encoder_p = LstmParams::zeros(m.config.embed_dim, d2);
        m.encoder_p.b_f = Tensor::vector(vec![-1000.0; d2]);
        m.encoder_p.b_i = Tensor::vector(vec![1.0; d2]);
        m.encoder_p.b_c = Tensor::vector((0..d2).map(|j| 0.4 * j as f64 - 0.7).collect());
        m.encoder_p.b_o = Tensor::vector(vec![0.5; d2]);
        let ex = example(&["a", "b", "c", "d", "e"]);
        for ranking in [Ranking::Attention, Ranking::Random] {
            let e = erasure_flip_fraction(&m, &ex, ranking, 11).unwrap();
            assert_eq!(
                e,
                Erasure {
                    fraction: 1.0,
                    flipped: false
                }
            );
        }
    }

    #[test]
    fn short_examples_are_rejected() {
        assert!(erasure_flip_fraction(&random_model(0), &example(&["a"]), Ranking::Attention, 0).is_err());
    }

    #[test]
    fn random_order_depends_on_seed_and_id_only() {
        let m = random_model(5);
        let ex = example(&["a", "b", "c", "d", "e", "f", "a"]);
        let a = erasure_flip_fraction(&m, &ex, Ranking::Random, 9).unwrap();
        let b = erasure_flip_fraction(&m, &ex, Ranking::Random, 9).unwrap();
        assert_eq!(a, b);
    }

    /// Smallest number of erasures (at most two) that flips the decision.
    fn brute_force_min_flip(m: &Model, input: &ModelInput, base: &Prediction) -> Option<usize> {
        let len = input.ids.len();
        let flips = |mask: &[bool]| {
            m.forward_with_overrides(
                input,
                Overrides {
                    alpha: None,
                    erase: Some(mask),
                },
            )
            .unwrap()
            .class()
                != base.class()
        };
        let single = (0..len).any(|t| {
            let mut mask = vec![false; len];
            mask[t] = true;
            flips(&mask)
        });
        if single {
            return Some(1);
        }
        if len < 3 {
            return None;
        }
        let pair = (0..len).any(|a| {
            (a + 1..len).any(|b| {
                let mut mask = vec![false; len];
                mask[a] = true;
                mask[b] = true;
                flips(&mask)
            })
        });
        pair.then_some(2)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn attention_ranking_never_beats_brute_force(seed in 0u64..1000, ids in prop::collection::vec(2usize..8, 2..=8)) {
            let m = random_model(seed);
            let tokens: Vec<&str> = ids.iter().map(|&i| m.vocab().tokens()[i].as_str()).collect();
            let ex = Example::new("p", &tokens, 0);
            let input = m.input(&ex);
            let base = m.forward(&input).unwrap();
            let e = erasure_flip_fraction(&m, &ex, Ranking::Attention, seed).unwrap();
            let erased = (e.fraction * ids.len() as f64).round() as usize;
            match brute_force_min_flip(&m, &input, &base) {
                Some(k) => prop_assert!(erased >= k),
                None => prop_assert!(erased >= 3.min(ids.len())),
            }
        }
    }
}
