//! Runs the requested analyses over a dataset and collects the results.
//!
//! # Schema
//!
//! `analysis.json` holds one [`AnalysisReport`]:
//!
//! * `examples`: one [`ExampleRecord`] per evaluated example, sorted by id.
//!   Fields belonging to suites that were not run, or that are undefined for
//!   the example (e.g. a constant attention vector has no Pearson
//!   correlation), are `null`.
//! * `aggregates`: a [`Summary`] per numeric record field, computed from the
//!   non-null values in `examples`.
//! * `pos`, `rationale`, `conicity_baseline`: dataset-level results of the
//!   corresponding suites.
//!
//! `analysis.csv` has one row per example with the scalar record fields.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faithfulness::attribution::{agreement, gradient_attribution, integrated_gradients, DEFAULT_IG_STEPS};
use crate::faithfulness::erasure::{erasure_flip_fraction, Ranking};
use crate::faithfulness::metrics::Summary;
use crate::faithfulness::permutation::{permutation_tvd, DEFAULT_PERMUTATIONS};
use crate::faithfulness::pos::{pos_attention, require_pos, TagShare};
use crate::faithfulness::rationale::{
    rationale_record, summarize_rationales, train_rationale_policy, PolicyEpoch, RationaleConfig, RationalePolicy,
};
use crate::geometry::{conicity, isotropic_baseline_conicity, BaselineConicity, VectorSet};
use crate::model::Model;
use crate::training::Example;

pub const REPORT_VERSION: u32 = 1;
const BASELINE_TRIALS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Conicity,
    Erasure,
    Permutation,
    Gradients,
    Ig,
    Rationale,
    Pos,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Conicity,
        Suite::Erasure,
        Suite::Permutation,
        Suite::Gradients,
        Suite::Ig,
        Suite::Rationale,
        Suite::Pos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Conicity => "conicity",
            Suite::Erasure => "erasure",
            Suite::Permutation => "permutation",
            Suite::Gradients => "gradients",
            Suite::Ig => "ig",
            Suite::Rationale => "rationale",
            Suite::Pos => "pos",
        }
    }

    /// Parses a suite name; `all` expands to every suite.
    pub fn parse_list(s: &str) -> Result<BTreeSet<Suite>> {
        if s == "all" {
            return Ok(Suite::ALL.into_iter().collect());
        }
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub suites: BTreeSet<Suite>,
    pub seed: u64,
    pub n_perms: usize,
    pub ig_steps: usize,
    pub rationale: RationaleConfig,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            suites: Suite::ALL.into_iter().collect(),
            seed: 0,
            n_perms: DEFAULT_PERMUTATIONS,
            ig_steps: DEFAULT_IG_STEPS,
            rationale: RationaleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub predicted: usize,
    pub alpha: Vec<f64>,
    pub conicity: Option<f64>,
    pub flip_fraction_attention: Option<f64>,
    pub flipped_attention: Option<bool>,
    pub flip_fraction_random: Option<f64>,
    pub flipped_random: Option<bool>,
    pub max_alpha: Option<f64>,
    pub median_tvd: Option<f64>,
    pub gradient_pearson: Option<f64>,
    pub gradient_js: Option<f64>,
    pub ig_pearson: Option<f64>,
    pub ig_js: Option<f64>,
    /// `f(x) − f(baseline)` for the IG target.
    pub ig_delta: Option<f64>,
    /// Sum of all raw IG attributions.
    pub ig_total: Option<f64>,
    pub rationale_attention: Option<f64>,
    pub rationale_length: Option<f64>,
    pub rationale_correct: Option<bool>,
}

impl ExampleRecord {
    /// Relative IG completeness error `|total − delta| / |delta|`.
    pub fn ig_completeness_error(&self) -> Option<f64> {
        Some((self.ig_total? - self.ig_delta?).abs() / self.ig_delta?.abs())
    }

    fn numeric_fields(&self) -> [(&'static str, Option<f64>); 13] {
        [
            ("conicity", self.conicity),
            ("flip_fraction_attention", self.flip_fraction_attention),
            ("flip_fraction_random", self.flip_fraction_random),
            ("max_alpha", self.max_alpha),
            ("median_tvd", self.median_tvd),
            ("gradient_pearson", self.gradient_pearson),
            ("gradient_js", self.gradient_js),
            ("ig_pearson", self.ig_pearson),
            ("ig_js", self.ig_js),
            ("ig_completeness_error", self.ig_completeness_error()),
            ("rationale_attention", self.rationale_attention),
            ("rationale_length", self.rationale_length),
            ("rationale_correct", self.rationale_correct.map(|c| c as u8 as f64)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleOverview {
    pub config: RationaleConfig,
    pub training: Vec<PolicyEpoch>,
    pub full_accuracy: f64,
    pub rationale_accuracy: f64,
    pub mean_attention: Option<f64>,
    pub mean_length: Option<f64>,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub version: u32,
    pub seed: u64,
    pub suites: Vec<Suite>,
    pub accuracy: f64,
    pub examples: Vec<ExampleRecord>,
    pub aggregates: BTreeMap<String, Summary>,
    pub pos: Option<BTreeMap<String, TagShare>>,
    pub rationale: Option<RationaleOverview>,
    pub conicity_baseline: Option<BaselineConicity>,
}

/// Per-field summaries over the records.
pub fn aggregate(records: &[ExampleRecord]) -> BTreeMap<String, Summary> {
    let mut columns: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for r in records {
        for (name, v) in r.numeric_fields() {
            let col = columns.entry(name).or_default();
            if let Some(v) = v {
                col.push(v);
            }
        }
    }
    columns
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (k.to_string(), Summary::of(&v)))
        .collect()
}

impl AnalysisReport {
    /// `Σ|total − delta| / Σ|delta|` over examples with IG results.
    pub fn ig_completeness(&self) -> Option<f64> {
        let (mut err, mut delta) = (0.0, 0.0);
        let mut any = false;
        for r in &self.examples {
            if let (Some(t), Some(d)) = (r.ig_total, r.ig_delta) {
                err += (t - d).abs();
                delta += d.abs();
                any = true;
            }
        }
        any.then(|| err / delta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: AnalysisReport = serde_json::from_str(text)?;
        if report.version != REPORT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "analysis version {} (expected {REPORT_VERSION})",
                report.version
            )));
        }
        Ok(report)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fields = ExampleRecord::default().numeric_fields();
        let header = ["id", "label", "predicted", "length"]
            .into_iter()
            .chain(fields.iter().map(|(n, _)| *n))
            .chain(["flipped_attention", "flipped_random"]);
        w.write_record(header).map_err(csv_error)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let flag = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.examples {
            let mut row = vec![
                r.id.clone(),
                r.label.to_string(),
                r.predicted.to_string(),
                r.tokens.len().to_string(),
            ];
            row.extend(r.numeric_fields().iter().map(|(_, v)| opt(*v)));
            row.push(flag(r.flipped_attention));
            row.push(flag(r.flipped_random));
            w.write_record(&row).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn analyze_example(
    model: &Model,
    ex: &Example,
    options: &AnalysisOptions,
    policy: Option<&RationalePolicy>,
) -> Result<(ExampleRecord, bool)> {
    let p = model.forward_example(ex)?;
    let has = |s: Suite| options.suites.contains(&s);
    let long_enough = ex.tokens.len() >= 2;
    let mut r = ExampleRecord {
        id: ex.id.clone(),
        tokens: ex.tokens.clone(),
        label: ex.label,
        predicted: p.class(),
        alpha: p.alpha.clone(),
        ..ExampleRecord::default()
    };
    if has(Suite::Conicity) {
        r.conicity = VectorSet::new(p.hidden.clone()).and_then(|s| conicity(&s)).ok();
    }
    if has(Suite::Erasure) && long_enough {
        let a = erasure_flip_fraction(model, ex, Ranking::Attention, options.seed)?;
        let b = erasure_flip_fraction(model, ex, Ranking::Random, options.seed)?;
        r.flip_fraction_attention = Some(a.fraction);
        r.flipped_attention = Some(a.flipped);
        r.flip_fraction_random = Some(b.fraction);
        r.flipped_random = Some(b.flipped);
    }
    if has(Suite::Permutation) && long_enough {
        let t = permutation_tvd(model, ex, options.n_perms, options.seed)?;
        r.max_alpha = Some(t.max_alpha);
        r.median_tvd = Some(t.median_tvd);
    }
    if has(Suite::Gradients) {
        match gradient_attribution(model, ex) {
            Ok(a) => {
                let ag = agreement(&ex.id, &p.alpha, &a.distribution);
                r.gradient_pearson = ag.pearson;
                r.gradient_js = ag.js;
            }
            Err(Error::DegenerateAttribution(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if has(Suite::Ig) {
        match integrated_gradients(model, ex, options.ig_steps, None) {
            Ok(ig) => {
                let ag = agreement(&ex.id, &p.alpha, &ig.attribution.distribution);
                r.ig_pearson = ag.pearson;
                r.ig_js = ag.js;
                r.ig_delta = Some(ig.f_input - ig.f_baseline);
                r.ig_total = Some(ig.token_sums.iter().sum());
            }
            Err(Error::DegenerateAttribution(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let mut full_correct = p.class() == ex.label;
    if let Some(policy) = policy {
        let (rec, ok) = rationale_record(model, policy, ex)?;
        r.rationale_attention = rec.attention;
        r.rationale_length = rec.length;
        r.rationale_correct = Some(rec.correct);
        full_correct = ok;
    }
    Ok((r, full_correct))
}

/// Runs `options.suites` over `examples`. The rationale suite trains its
/// policy on `train` first.
pub fn analyze(
    model: &Model,
    examples: &[Example],
    train: &[Example],
    options: &AnalysisOptions,
) -> Result<AnalysisReport> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to analyze".into()));
    }
    let has = |s: Suite| options.suites.contains(&s);
    if has(Suite::Pos) {
        require_pos(examples)?;
    }
    let trained = if has(Suite::Rationale) {
        let config = RationaleConfig {
            seed: options.seed,
            ..options.rationale.clone()
        };
        Some((train_rationale_policy(model, train, &config)?, config))
    } else {
        None
    };
    let policy = trained.as_ref().map(|((p, _), _)| p);
    let mut rows: Vec<(ExampleRecord, bool)> = examples
        .par_iter()
        .map(|ex| analyze_example(model, ex, options, policy))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let accuracy = rows.iter().filter(|(r, _)| r.predicted == r.label).count() as f64 / rows.len() as f64;

    let rationale = trained.map(|((_, training), config)| {
        let summary = summarize_rationales(
            rows.iter()
                .map(|(r, ok)| {
                    let rec = crate::faithfulness::rationale::RationaleRecord {
                        id: r.id.clone(),
                        attention: r.rationale_attention,
                        length: r.rationale_length,
                        correct: r.rationale_correct.unwrap_or(false),
                    };
                    (rec, *ok)
                })
                .collect(),
        );
        RationaleOverview {
            config,
            training,
            full_accuracy: summary.full_accuracy,
            rationale_accuracy: summary.rationale_accuracy,
            mean_attention: summary.mean_attention,
            mean_length: summary.mean_length,
            missing: summary.missing,
        }
    });
    let pos = if has(Suite::Pos) {
        Some(pos_attention(model, examples)?)
    } else {
        None
    };
    let conicity_baseline = if has(Suite::Conicity) {
        let lengths: Vec<f64> = examples.iter().map(|e| e.tokens.len() as f64).collect();
        let m = crate::faithfulness::metrics::median(&lengths)
            .expect("non-empty")
            .round()
            .max(2.0) as usize;
        Some(isotropic_baseline_conicity(
            m,
            model.config.hidden_dim,
            BASELINE_TRIALS,
            options.seed,
        )?)
    } else {
        None
    };
    let examples: Vec<ExampleRecord> = rows.into_iter().map(|(r, _)| r).collect();
    Ok(AnalysisReport {
        version: REPORT_VERSION,
        seed: options.seed,
        suites: options.suites.iter().copied().collect(),
        accuracy,
        aggregates: aggregate(&examples),
        examples,
        pos,
        rationale,
        conicity_baseline,
    })
}
