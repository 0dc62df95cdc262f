//! Additive attention and the linear output head.

use rand::Rng;

use crate::encoders::uniform_tensor;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Additive attention weights. `w2` is present only for sequence-pair tasks,
/// where it projects the query state.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w1: Tensor,
    pub w2: Option<Tensor>,
    pub b: Tensor,
    pub v: Tensor,
}

impl AttentionParams {
    pub fn random(d2: usize, d_att: usize, with_query: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d2 as f64).sqrt();
        let w1 = uniform_tensor(&[d_att, d2], bound, rng);
        let w2 = with_query.then(|| uniform_tensor(&[d_att, d2], bound, rng));
        let v = uniform_tensor(&[d_att], 1.0 / (d_att as f64).sqrt(), rng);
        AttentionParams {
            w1,
            w2,
            b: Tensor::zeros(&[d_att]),
            v,
        }
    }

    pub fn zeros(d2: usize, d_att: usize, with_query: bool) -> Self {
        AttentionParams {
            w1: Tensor::zeros(&[d_att, d2]),
            w2: with_query.then(|| Tensor::zeros(&[d_att, d2])),
            b: Tensor::zeros(&[d_att]),
            v: Tensor::zeros(&[d_att]),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> AttentionVars<'t> {
        let put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        AttentionVars {
            w1: put(&self.w1),
            w2: self.w2.as_ref().map(put),
            b: put(&self.b),
            v: put(&self.v),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars<'t> {
    pub w1: Var<'t>,
    pub w2: Option<Var<'t>>,
    pub b: Var<'t>,
    pub v: Var<'t>,
}

/// Output projection `W_o` (`C × d2`); there is no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams {
    pub w_o: Tensor,
}

impl OutputParams {
    pub fn random(classes: usize, d2: usize, rng: &mut impl Rng) -> Self {
        OutputParams {
            w_o: uniform_tensor(&[classes, d2], 1.0 / (d2 as f64).sqrt(), rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.w_o.rows()
    }
}

/// Attention scores, weights and context for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct Attended<'t> {
    pub scores: Var<'t>,
    pub alpha: Var<'t>,
    pub context: Var<'t>,
}

/// Unnormalized scores `vᵀ tanh(W1 h_t [+ W2 q] + b)` for each hidden state.
pub fn attention_scores<'t>(
    tape: &'t Tape,
    hidden: &[Var<'t>],
    query: Option<Var<'t>>,
    p: &AttentionVars<'t>,
) -> Result<Var<'t>> {
    if hidden.is_empty() {
        return Err(Error::InvalidArgument("attention over zero positions".into()));
    }
    let shift = match (query, p.w2) {
        (Some(q), Some(w2)) => w2.matmul(q)?.add(p.b)?,
        (None, None) => p.b,
        (Some(_), None) => {
            return Err(Error::InvalidArgument(
                "query given to a query-free attention layer".into(),
            ))
        }
        (None, Some(_)) => return Err(Error::InvalidArgument("pair attention needs a query".into())),
    };
    let scores = hidden
        .iter()
        .map(|h| p.w1.matmul(*h)?.add(shift)?.tanh()?.dot(p.v))
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&scores)
}

/// Weighted sum `Σ α_t h_t`.
pub fn context_vector<'t>(alpha: Var<'t>, hidden: &[Var<'t>]) -> Result<Var<'t>> {
    if hidden.is_empty() || alpha.len() != hidden.len() {
        return Err(Error::shape(
            "context",
            format!("{} weights for {} states", alpha.len(), hidden.len()),
        ));
    }
    let mut context = hidden[0].scalar_mul(alpha.at(0)?)?;
    for (t, h) in hidden.iter().enumerate().skip(1) {
        context = context.add(h.scalar_mul(alpha.at(t)?)?)?;
    }
    Ok(context)
}

/// Softmax attention over `hidden` and the resulting context vector.
pub fn additive_attention<'t>(
    tape: &'t Tape,
    hidden: &[Var<'t>],
    query: Option<Var<'t>>,
    p: &AttentionVars<'t>,
) -> Result<Attended<'t>> {
    let scores = attention_scores(tape, hidden, query, p)?;
    let alpha = scores.softmax()?;
    let context = context_vector(alpha, hidden)?;
    Ok(Attended { scores, alpha, context })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn consts<'t>(tape: &'t Tape, rows: &[Vec<f64>]) -> Vec<Var<'t>> {
        rows.iter().map(|r| tape.constant(Tensor::vector(r.clone()))).collect()
    }

    #[test]
    fn single_position_takes_all_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tape = Tape::new();
        let p = AttentionParams::random(3, 2, false, &mut rng).bind(&tape, false);
        let h = consts(&tape, &[vec![0.1, -0.4, 0.9]]);
        let a = additive_attention(&tape, &h, None, &p).unwrap();
        assert_eq!(a.alpha.value().data(), &[1.0]);
        assert_eq!(a.context.value().data(), &[0.1, -0.4, 0.9]);
    }

    #[test]
    fn zero_params_split_evenly() {
        let tape = Tape::new();
        let p = AttentionParams::zeros(2, 2, false).bind(&tape, false);
        let h = consts(&tape, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let a = additive_attention(&tape, &h, None, &p).unwrap();
        assert_eq!(a.alpha.value().data(), &[0.5, 0.5]);
        assert_eq!(a.context.value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn identical_states_fix_the_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = vec![0.25, -0.5, 0.125, 1.0];
        let tape = Tape::new();
        let hidden = consts(&tape, &vec![h.clone(); 5]);
        for _ in 0..10 {
            let mut w: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            w.shuffle(&mut rng);
            let alpha = tape.constant(Tensor::vector(w));
            let c = context_vector(alpha, &hidden).unwrap().value();
            for (a, b) in c.data().iter().zip(&h) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn query_free_attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let params = AttentionParams::random(4, 3, false, &mut rng);
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let base = additive_attention(&tape, &consts(&tape, &rows), None, &p).unwrap();
        let permuted_rows: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let permuted = additive_attention(&tape, &consts(&tape, &permuted_rows), None, &p).unwrap();
        let (a, b) = (base.alpha.value(), permuted.alpha.value());
        for (k, &i) in perm.iter().enumerate() {
            assert!((b.data()[k] - a.data()[i]).abs() < 1e-12);
        }
        for (x, y) in base.context.value().data().iter().zip(permuted.context.value().data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn query_presence_must_match_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tape = Tape::new();
        let single = AttentionParams::random(2, 2, false, &mut rng).bind(&tape, false);
        let pair = AttentionParams::random(2, 2, true, &mut rng).bind(&tape, false);
        let h = consts(&tape, &[vec![1.0, 2.0]]);
        let q = h[0];
        assert!(additive_attention(&tape, &h, Some(q), &single).is_err());
        assert!(additive_attention(&tape, &h, None, &pair).is_err());
        assert!(additive_attention(&tape, &h, Some(q), &pair).is_ok());
        assert!(additive_attention(&tape, &[], None, &single).is_err());
    }
}
