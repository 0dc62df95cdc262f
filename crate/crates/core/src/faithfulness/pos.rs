//! Attention aggregated by part-of-speech tag.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::Example;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagShare {
    /// Share of all attention mass placed on tokens with this tag.
    pub attention: f64,
    /// Share of all tokens carrying this tag.
    pub frequency: f64,
}

/// Fails with the ids of examples lacking tags.
pub fn require_pos(examples: &[Example]) -> Result<()> {
    let ids: Vec<String> = examples
        .iter()
        .filter(|e| e.pos.as_ref().is_none_or(|p| p.len() != e.tokens.len()))
        .map(|e| e.id.clone())
        .collect();
    if ids.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingPos { ids })
    }
}

/// Accumulates per-tag shares from `(tags, alpha)` pairs.
pub fn tag_shares<'a>(items: impl IntoIterator<Item = (&'a [String], &'a [f64])>) -> BTreeMap<String, TagShare> {
    let mut mass: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let (mut total_mass, mut total_tokens) = (0.0, 0usize);
    for (tags, alpha) in items {
        for (tag, a) in tags.iter().zip(alpha) {
            let e = mass.entry(tag.clone()).or_default();
            e.0 += a;
            e.1 += 1;
            total_mass += a;
            total_tokens += 1;
        }
    }
    mass.into_iter()
        .map(|(tag, (m, n))| {
            (
                tag,
                TagShare {
                    attention: m / total_mass,
                    frequency: n as f64 / total_tokens as f64,
                },
            )
        })
        .collect()
}

/// Cumulative attention share and token-frequency share per tag.
pub fn pos_attention(model: &Model, examples: &[Example]) -> Result<BTreeMap<String, TagShare>> {
    require_pos(examples)?;
    let alphas: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|ex| Ok(model.forward_example(ex)?.alpha))
        .collect::<Result<_>>()?;
    Ok(tag_shares(
        examples
            .iter()
            .zip(&alphas)
            .map(|(e, a)| (e.pos.as_deref().expect("checked"), a.as_slice())),
    ))
}
