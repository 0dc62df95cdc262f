//! Gradient and integrated-gradient token attributions, and their agreement
//! with attention.
//!
//! Attributions are computed for any scalar target of the per-token input
//! vectors; [`ModelTarget`] is the log-probability of the predicted class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faithfulness::metrics::{js_divergence, pearson, Summary};
use crate::model::{Model, ModelInput, Overrides};
use crate::tensor::{Tape, Tensor, Var};
use crate::training::Example;

pub const DEFAULT_IG_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gradient,
    IntegratedGradient,
}

/// Normalized absolute attribution per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub method: Method,
    pub distribution: Vec<f64>,
}

/// Integrated gradients with the quantities needed for a completeness check.
#[derive(Debug, Clone, PartialEq)]
pub struct IgResult {
    pub attribution: AttributionResult,
    /// Signed per-token sums of the per-coordinate attributions.
    pub token_sums: Vec<f64>,
    pub f_input: f64,
    pub f_baseline: f64,
}

impl IgResult {
    /// `|Σ token_sums − (f(x) − f(b))| / |f(x) − f(b)|`.
    pub fn completeness_error(&self) -> f64 {
        let delta = self.f_input - self.f_baseline;
        let total: f64 = self.token_sums.iter().sum();
        (total - delta).abs() / delta.abs()
    }
}

/// A scalar function of per-token input vectors, evaluated on a fresh tape.
pub trait Target: Sync {
    fn eval<'t>(&self, tape: &'t Tape, inputs: Vec<Var<'t>>) -> Result<Var<'t>>;
}

/// Value of `target` at `inputs` (`m × d`) and its gradient with respect to them.
pub fn input_gradient(target: &impl Target, inputs: &Tensor) -> Result<(f64, Tensor)> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = (0..inputs.rows())
        .map(|t| tape.leaf(Tensor::vector(inputs.row(t).to_vec())))
        .collect();
    let out = target.eval(&tape, vars.clone())?;
    let grads = tape.backward(out)?;
    let mut g = Vec::with_capacity(inputs.len());
    for v in &vars {
        g.extend_from_slice(grads.wrt(*v).data());
    }
    Ok((out.item(), Tensor::new(inputs.shape().to_vec(), g)?))
}

/// Per-row L1 norms normalized to sum to one.
fn normalized_l1(method: Method, scores: &Tensor) -> Result<AttributionResult> {
    let per_token: Vec<f64> = (0..scores.rows())
        .map(|t| scores.row(t).iter().map(|x| x.abs()).sum())
        .collect();
    let total: f64 = per_token.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateAttribution(format!("total attribution {total}")));
    }
    Ok(AttributionResult {
        method,
        distribution: per_token.iter().map(|x| x / total).collect(),
    })
}

pub fn gradient_attribution_of(target: &impl Target, inputs: &Tensor) -> Result<AttributionResult> {
    let (_, g) = input_gradient(target, inputs)?;
    normalized_l1(Method::Gradient, &g)
}

/// Midpoint-rule integrated gradients along the straight path from `baseline` to `inputs`.
pub fn integrated_gradients_of(
    target: &impl Target,
    inputs: &Tensor,
    baseline: &Tensor,
    steps: usize,
) -> Result<IgResult> {
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients need steps >= 1".into()));
    }
    if inputs.shape() != baseline.shape() {
        return Err(Error::shape(
            "integrated_gradients",
            format!("inputs {:?} vs baseline {:?}", inputs.shape(), baseline.shape()),
        ));
    }
    let diff: Vec<f64> = inputs.data().iter().zip(baseline.data()).map(|(x, b)| x - b).collect();
    let mut avg = vec![0.0; inputs.len()];
    for k in 0..steps {
        let s = (k as f64 + 0.5) / steps as f64;
        let point: Vec<f64> = baseline.data().iter().zip(&diff).map(|(b, d)| b + s * d).collect();
        let (_, g) = input_gradient(target, &Tensor::new(inputs.shape().to_vec(), point)?)?;
        avg.iter_mut().zip(g.data()).for_each(|(a, g)| *a += g / steps as f64);
    }
    let ig = Tensor::new(
        inputs.shape().to_vec(),
        avg.iter().zip(&diff).map(|(g, d)| g * d).collect(),
    )?;
    let token_sums = (0..ig.rows()).map(|t| ig.row(t).iter().sum()).collect();
    let f_at = |x: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let vars = (0..x.rows())
            .map(|t| tape.constant(Tensor::vector(x.row(t).to_vec())))
            .collect();
        Ok(target.eval(&tape, vars)?.item())
    };
    Ok(IgResult {
        attribution: normalized_l1(Method::IntegratedGradient, &ig)?,
        token_sums,
        f_input: f_at(inputs)?,
        f_baseline: f_at(baseline)?,
    })
}

/// `log ŷ[class]` of a model as a function of the passage input vectors.
pub struct ModelTarget<'a> {
    pub model: &'a Model,
    pub query_ids: Option<&'a [usize]>,
    pub class: usize,
}

impl Target for ModelTarget<'_> {
    fn eval<'t>(&self, tape: &'t Tape, inputs: Vec<Var<'t>>) -> Result<Var<'t>> {
        let bound = self.model.bind(tape, false);
        let trace = bound.run_embedded(inputs, self.query_ids, Overrides::default())?;
        trace.y_hat.at(self.class)?.log()
    }
}

fn model_target<'a>(model: &'a Model, input: &'a ModelInput, class: usize) -> ModelTarget<'a> {
    ModelTarget {
        model,
        query_ids: input.query_ids.as_deref(),
        class,
    }
}

fn prepared(model: &Model, example: &Example) -> Result<(ModelInput, usize, Vec<f64>, Tensor)> {
    let input = model.input(example);
    let p = model.forward(&input)?;
    let embedded = model.embedding.embed(&input.ids)?;
    Ok((input, p.class(), p.alpha, embedded))
}

/// Normalized `‖∂ log ŷ[argmax] / ∂e(w_t)‖₁` per token.
pub fn gradient_attribution(model: &Model, example: &Example) -> Result<AttributionResult> {
    let (input, class, _, embedded) = prepared(model, example)?;
    gradient_attribution_of(&model_target(model, &input, class), &embedded)
}

/// Integrated gradients of `log ŷ[argmax]`; `baseline` defaults to zero embeddings.
pub fn integrated_gradients(
    model: &Model,
    example: &Example,
    steps: usize,
    baseline: Option<&Tensor>,
) -> Result<IgResult> {
    let (input, class, _, embedded) = prepared(model, example)?;
    let zeros = Tensor::zeros(embedded.shape());
    integrated_gradients_of(
        &model_target(model, &input, class),
        &embedded,
        baseline.unwrap_or(&zeros),
        steps,
    )
}

/// Per-example agreement between attention and an attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub id: String,
    /// `None` when either side is constant.
    pub pearson: Option<f64>,
    pub js: Option<f64>,
}

pub fn agreement(id: &str, alpha: &[f64], attribution: &[f64]) -> Agreement {
    Agreement {
        id: id.to_string(),
        pearson: pearson(alpha, attribution).ok(),
        js: js_divergence(alpha, attribution).ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub method: Method,
    pub records: Vec<Agreement>,
    pub pearson: Summary,
    pub js: Summary,
}

impl AgreementReport {
    pub fn from_records(method: Method, records: Vec<Agreement>) -> Self {
        let p: Vec<f64> = records.iter().filter_map(|r| r.pearson).collect();
        let j: Vec<f64> = records.iter().filter_map(|r| r.js).collect();
        AgreementReport {
            method,
            pearson: Summary::of(&p),
            js: Summary::of(&j),
            records,
        }
    }
}

/// Attention-vs-attribution agreement over `examples`; degenerate examples
/// are recorded with missing values.
pub fn attribution_agreement(
    model: &Model,
    examples: &[Example],
    method: Method,
    steps: usize,
) -> Result<AgreementReport> {
    let records = examples
        .par_iter()
        .map(|ex| {
            let alpha = model.forward_example(ex)?.alpha;
            let attr = match method {
                Method::Gradient => gradient_attribution(model, ex),
                Method::IntegratedGradient => integrated_gradients(model, ex, steps, None).map(|r| r.attribution),
            };
            match attr {
                Ok(a) => Ok(agreement(&ex.id, &alpha, &a.distribution)),
                Err(Error::DegenerateAttribution(_)) => Ok(Agreement {
                    id: ex.id.clone(),
                    pearson: None,
                    js: None,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AgreementReport::from_records(method, records))
}
