//! Central finite-difference gradient checking.

use crate::encoders::{CellKind, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelInput, Overrides, TaskArity};
use crate::rng::stream;
use crate::tensor::Tape;
use crate::training::trainer::{diversity_loss, example_gradients};

/// Default step for central differences.
pub const DEFAULT_EPSILON: f64 = 1e-5;
/// Smallest denominator used for the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Largest relative disagreement between `analytic` and the central
/// difference of `f` over all coordinates of `params`.
///
/// Per coordinate the error is `|a − n| / max(|a| + |n|, RELATIVE_FLOOR)`.
/// The floor keeps roundoff in the difference quotient (about 1e-11 for
/// unit-scale losses) from dominating coordinates whose gradient is ~0.
pub fn finite_difference_check<F>(f: F, analytic: &[f64], params: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(
            "finite_difference_check",
            format!("{} gradients for {} params", analytic.len(), params.len()),
        ));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let plus = f(&probe)?;
        probe[i] = params[i] - eps;
        let minus = f(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_difference_check",
            });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(RELATIVE_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Largest relative error a gradient check may report and still pass.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// λ used for the regularized-loss checks.
pub const GRADCHECK_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub component: String,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

fn model_loss(model: &Model, input: &ModelInput, label: usize, lambda: f64) -> Result<f64> {
    let tape = Tape::new();
    let trace = model.bind(&tape, false).run(input, Overrides::default())?;
    Ok(diversity_loss(&tape, label, trace.logits, &trace.hidden, lambda)?.item())
}

/// Checks every model parameter's gradient for each cell kind, with and
/// without the conicity term, on a `d1 = d2 = 4` model and a length-5 input.
///
/// `inject_bug` perturbs one analytic gradient entry so the check must fail.
pub fn model_gradient_suite(seed: u64, inject_bug: bool) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for cell in [CellKind::Vanilla, CellKind::Orthogonal] {
        let config = ModelConfig {
            cell,
            arity: TaskArity::Single,
            embed_dim: 4,
            hidden_dim: 4,
            attention_dim: 3,
            classes: 3,
        };
        let vocab = Vocab::from_tokens(["a", "b", "c", "d", "e"]);
        let mut model = Model::random(config, vocab, &mut stream(seed, &["gradcheck", &cell.to_string()]))?;
        // Larger embeddings keep the hidden states away from the origin.
        model.embedding.vectors = model.embedding.vectors.map(|x| 8.0 * x);
        let input = ModelInput {
            ids: vec![2, 5, 3, 6, 4],
            query_ids: None,
        };
        for (name, lambda) in [("nll", 0.0), ("nll+conicity", GRADCHECK_LAMBDA)] {
            let (_, grads) = example_gradients(&model, &input, 1, lambda)?;
            let mut analytic: Vec<f64> = grads.into_iter().flat_map(|g| g.into_data()).collect();
            if inject_bug {
                let i = analytic.iter().position(|g| g.abs() > 1e-6).unwrap_or(0);
                analytic[i] = analytic[i] * 1.5 + 1e-3;
            }
            let params = model.flat_params();
            let err = finite_difference_check(
                |v| {
                    let mut m = model.clone();
                    m.set_flat_params(v)?;
                    model_loss(&m, &input, 1, lambda)
                },
                &analytic,
                &params,
                DEFAULT_EPSILON,
            )?;
            out.push(GradCheck {
                component: format!("{cell}/{name}"),
                max_rel_error: err,
            });
        }
    }
    Ok(out)
}
