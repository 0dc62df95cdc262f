//! Sensitivity of the output to randomly permuted attention weights.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faithfulness::metrics::{median, tvd};
use crate::model::{Model, ModelInput, Overrides, Prediction};
use crate::rng::stream;
use crate::training::Example;

pub const DEFAULT_PERMUTATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub max_alpha: f64,
    pub median_tvd: f64,
}

/// TVD between the original output and the output with `alpha[perm[t]]` at position `t`.
pub fn tvd_under_permutation(model: &Model, input: &ModelInput, base: &Prediction, perm: &[usize]) -> Result<f64> {
    let m = base.alpha.len();
    let mut seen = vec![false; m];
    if perm.len() != m || perm.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidArgument(format!(
            "{perm:?} is not a permutation of 0..{m}"
        )));
    }
    let permuted: Vec<f64> = perm.iter().map(|&i| base.alpha[i]).collect();
    let p = model.forward_with_overrides(
        input,
        Overrides {
            alpha: Some(&permuted),
            erase: None,
        },
    )?;
    tvd(&base.y_hat, &p.y_hat)
}

/// Median TVD over `n_perms` seeded non-identity permutations of the
/// example's attention, together with its largest attention weight.
pub fn permutation_tvd(model: &Model, example: &Example, n_perms: usize, seed: u64) -> Result<PermutationResult> {
    let input = model.input(example);
    let m = input.ids.len();
    if m < 2 || n_perms == 0 {
        return Err(Error::InvalidArgument(format!(
            "permutation test needs m >= 2 and n_perms >= 1 (example {}: m = {m}, n_perms = {n_perms})",
            example.id
        )));
    }
    let base = model.forward(&input)?;
    let mut rng = stream(seed, &["permutation", &example.id]);
    let identity: Vec<usize> = (0..m).collect();
    let mut tvds = Vec::with_capacity(n_perms);
    let mut perm = identity.clone();
    for _ in 0..n_perms {
        loop {
            perm.shuffle(&mut rng);
            if perm != identity {
                break;
            }
        }
        tvds.push(tvd_under_permutation(model, &input, &base, &perm)?);
    }
    Ok(PermutationResult {
        max_alpha: base.alpha.iter().copied().fold(0.0, f64::max),
        median_tvd: median(&tvds).expect("n_perms >= 1"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{CellKind, LstmParams, Vocab};
    use crate::model::{ModelConfig, TaskArity};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Model {
        let vocab = Vocab::from_tokens(["a", "b", "c", "d"]);
        let config = ModelConfig {
            cell: CellKind::Orthogonal,
            arity: TaskArity::Single,
            embed_dim: 4,
            hidden_dim: 6,
            attention_dim: 3,
            classes: 2,
        };
        let mut m = Model::random(config, vocab, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        m.embedding.vectors = m.embedding.vectors.map(|x| 15.0 * x);
        m.attention.v = m.attention.v.map(|x| 10.0 * x);
        m.output.w_o = m.output.w_o.map(|x| 10.0 * x);
        m
    }

    #[test]
    fn identity_permutation_changes_nothing() {
        let m = model(1);
        let ex = Example::new("e", &["a", "b", "c", "d"], 0);
        let input = m.input(&ex);
        let base = m.forward(&input).unwrap();
        assert_eq!(tvd_under_permutation(&m, &input, &base, &[0, 1, 2, 3]).unwrap(), 0.0);
        assert!(tvd_under_permutation(&m, &input, &base, &[0, 1, 1, 3]).is_err());
        assert!(tvd_under_permutation(&m, &input, &base, &[0, 1, 2]).is_err());
    }

    #[test]
    fn identical_states_give_zero_tvd() {
        let mut m = model(2);
        let d2 = m.config.hidden_dim;
        m.config.cell = CellKind::Vanilla;
        m.encoder_p = LstmParams::zeros(m.config.embed_dim, d2);
        m.encoder_p.b_f = Tensor::vector(vec![-1000.0; d2]);
        m.encoder_p.b_i = Tensor::vector(vec![1.0; d2]);
        m.encoder_p.b_c = Tensor::vector((0..d2).map(|j| 0.3 * j as f64 - 0.6).collect());
        m.encoder_p.b_o = Tensor::vector(vec![0.5; d2]);
        let ex = Example::new("same", &["a", "b", "c", "d", "a"], 0);
        let r = permutation_tvd(&m, &ex, 50, 3).unwrap();
        assert!(r.median_tvd.abs() < 1e-12);
        assert!(r.max_alpha > 0.0 && r.max_alpha <= 1.0);
    }

    #[test]
    fn distinct_states_register_a_change() {
        let m = model(4);
        let ex = Example::new("e", &["a", "b", "c", "d", "b", "a"], 0);
        let r = permutation_tvd(&m, &ex, DEFAULT_PERMUTATIONS, 0).unwrap();
        assert!(r.median_tvd > 0.0);
        assert_eq!(r, permutation_tvd(&m, &ex, DEFAULT_PERMUTATIONS, 0).unwrap());
    }

    #[test]
    fn two_positions_always_swap() {
        // The only non-identity permutation of two positions is the swap.
        let m = model(5);
        let ex = Example::new("pair", &["a", "c"], 0);
        let input = m.input(&ex);
        let base = m.forward(&input).unwrap();
        let swap = tvd_under_permutation(&m, &input, &base, &[1, 0]).unwrap();
        let r = permutation_tvd(&m, &ex, 7, 9).unwrap();
        assert_eq!(r.median_tvd, swap);
    }

    #[test]
    fn rejects_degenerate_arguments() {
        let m = model(6);
        assert!(permutation_tvd(&m, &Example::new("s", &["a"], 0), 10, 0).is_err());
        assert!(permutation_tvd(&m, &Example::new("s", &["a", "b"], 0), 0, 0).is_err());
    }
}
