//! Alignment-to-mean and conicity of vector sets.
//!
//! Conicity near 1 means the vectors sit in a narrow cone around their mean;
//! direction-uniform random vectors give the no-structure reference computed
//! by [`isotropic_baseline_conicity`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// A non-empty set of equal-dimension vectors, stored as matrix rows.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    vectors: Tensor,
}

impl VectorSet {
    pub fn new(vectors: Tensor) -> Result<Self> {
        if vectors.shape().len() != 2 || vectors.rows() == 0 {
            return Err(Error::shape(
                "vector_set",
                format!("need a non-empty matrix, got {:?}", vectors.shape()),
            ));
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite { op: "vector_set" });
        }
        Ok(VectorSet { vectors })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        VectorSet::new(Tensor::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(|i| self.vectors.row(i))
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for row in self.rows() {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        let m = self.len() as f64;
        mean.iter_mut().for_each(|x| *x /= m);
        mean
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::DegenerateGeometry("zero vector".into()));
    }
    if nb == 0.0 {
        return Err(Error::DegenerateGeometry("set mean is the zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity between `v` and the mean of `set`.
pub fn atm(v: &[f64], set: &VectorSet) -> Result<f64> {
    if v.len() != set.dim() {
        return Err(Error::shape(
            "atm",
            format!("vector of length {} against {}-dim set", v.len(), set.dim()),
        ));
    }
    cosine(v, &set.mean())
}

/// Mean alignment-to-mean over all members of `set`.
pub fn conicity(set: &VectorSet) -> Result<f64> {
    let mean = set.mean();
    let mut total = 0.0;
    for row in set.rows() {
        total += cosine(row, &mean)?;
    }
    Ok(total / set.len() as f64)
}

/// Monte-Carlo statistics of conicity for direction-uniform random vectors.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BaselineConicity {
    pub mean: f64,
    pub std: f64,
}

/// Conicity of `m` isotropic unit vectors in `d` dimensions, averaged over
/// `trials` independent draws.
pub fn isotropic_baseline_conicity(m: usize, d: usize, trials: usize, seed: u64) -> Result<BaselineConicity> {
    if m < 2 || d < 2 || trials < 1 {
        return Err(Error::InvalidArgument(format!(
            "need m >= 2, d >= 2, trials >= 1 (got m={m}, d={d}, trials={trials})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(trials);
    let mut rows = vec![vec![0.0; d]; m];
    while samples.len() < trials {
        for row in rows.iter_mut() {
            loop {
                for x in row.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
                let n = norm(row);
                if n > 0.0 {
                    row.iter_mut().for_each(|x| *x /= n);
                    break;
                }
            }
        }
        // An exactly cancelling draw has no defined conicity; redraw it.
        if let Ok(c) = conicity(&VectorSet::from_rows(&rows)?) {
            samples.push(c);
        }
    }
    let mean = samples.iter().sum::<f64>() / trials as f64;
    let var = samples.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / trials as f64;
    Ok(BaselineConicity { mean, std: var.sqrt() })
}

/// Differentiable conicity of hidden states with the norm product guarded by
/// `+1e-8`, as used in the training objective.
pub fn guarded_conicity<'t>(tape: &'t Tape, vectors: &[Var<'t>]) -> Result<Var<'t>> {
    const GUARD: f64 = 1e-8;
    const NORM_FLOOR: f64 = 1e-30;
    let first = vectors
        .first()
        .ok_or_else(|| Error::DegenerateGeometry("empty vector set".into()))?;
    let m = vectors.len() as f64;
    let mut sum = *first;
    for v in &vectors[1..] {
        sum = sum.add(*v)?;
    }
    let mean = sum.scale(1.0 / m)?;
    let mean_norm = mean.dot(mean)?.add_const(NORM_FLOOR)?.sqrt()?;
    let mut atms = Vec::with_capacity(vectors.len());
    for v in vectors {
        let v_norm = v.dot(*v)?.add_const(NORM_FLOOR)?.sqrt()?;
        let denom = v_norm.mul(mean_norm)?.add_const(GUARD)?;
        atms.push(v.dot(mean)?.mul(denom.recip()?)?);
    }
    tape.concat(&atms)?.sum()?.scale(1.0 / m)
}
