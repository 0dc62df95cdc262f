//! Batch command-line runner: dataset synthesis, training, analysis,
//! report rendering and gradient checks.
//!
//! Exit codes are 0 on success, 1 when an experiment or check fails and 2 on
//! usage errors.

pub mod config;
pub mod render;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use divattn_core::encoders::CellKind;
use divattn_core::faithfulness::attribution::DEFAULT_IG_STEPS;
use divattn_core::faithfulness::permutation::DEFAULT_PERMUTATIONS;
use divattn_core::faithfulness::rationale::RationaleConfig;
use divattn_core::faithfulness::report::{analyze, AnalysisOptions, AnalysisReport, Suite};
use divattn_core::gradcheck::{model_gradient_suite, GRADCHECK_TOLERANCE};
use divattn_core::model::TaskArity;
use divattn_core::training::synth::{write_synthetic, SynthTask};
use divattn_core::training::trainer::{self, TrainConfig};
use divattn_core::training::{checkpoint, data};
use divattn_core::Error;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const ANALYSIS_JSON: &str = "analysis.json";
pub const ANALYSIS_CSV: &str = "analysis.csv";
pub const REPORT_HTML: &str = "report.html";

/// Marks errors that should exit with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "divattn", version, about = "Diversity-driven attention experiments")]
pub struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "DIVATTN_THREADS")]
    pub threads: Option<usize>,
    /// TOML file with defaults for the command's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as train/val/test JSONL splits.
    Synth(SynthArgs),
    /// Train a classifier and write a checkpoint.
    Train(TrainArgs),
    /// Run faithfulness analyses on a checkpoint.
    Analyze(AnalyzeArgs),
    /// Render an analysis as HTML and SVG.
    Report(ReportArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

fn parse_task(s: &str) -> Result<SynthTask, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_cell(s: &str) -> Result<CellKind, String> {
    match s {
        "vanilla" => Ok(CellKind::Vanilla),
        "orthogonal" => Ok(CellKind::Orthogonal),
        other => Err(format!("unknown cell {other:?} (expected vanilla or orthogonal)")),
    }
}

#[derive(Debug, Clone, Default, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    /// keyword, pair-paraphrase or qa1.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<SynthTask>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Directory holding train/val/test JSONL.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_cell)]
    pub cell: Option<CellKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub attention_dim: Option<usize>,
    /// Pretrained `word v1 .. vd` text embeddings.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split to evaluate; the rationale policy always trains on `train`.
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated suites, or `all`.
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_perms: Option<usize>,
    #[arg(long)]
    pub ig_steps: Option<usize>,
    #[arg(long)]
    pub alpha_r: Option<f64>,
    #[arg(long)]
    pub rationale_epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportArgs {
    #[arg(long)]
    pub analysis: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corrupt one analytic gradient entry to exercise the failure path.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inject_bug: bool,
    /// Optional directory for the resolved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn required<T>(value: Option<T>, flag: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 2;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        // A second configuration attempt in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let file = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => synth(config::merge(&a, file)?),
        Command::Train(a) => train(config::merge(&a, file)?),
        Command::Analyze(a) => analyze_cmd(config::merge(&a, file)?),
        Command::Report(a) => report(config::merge(&a, file)?),
        Command::Gradcheck(a) => gradcheck(config::merge(&a, file)?),
    }
}

fn synth(a: SynthArgs) -> anyhow::Result<i32> {
    let task = required(a.task, "task")?;
    let n = a.n.unwrap_or(1000);
    let seed = a.seed.unwrap_or(0);
    let out = required(a.out, "out")?;
    create_dir(&out)?;
    write_synthetic(task, n, seed, &out)?;
    let resolved = SynthArgs {
        task: Some(task),
        n: Some(n),
        seed: Some(seed),
        out: Some(out.clone()),
    };
    config::write_resolved("synth", &resolved, &out)?;
    println!("wrote {n} {task} examples to {}", out.display());
    Ok(0)
}

fn train(a: TrainArgs) -> anyhow::Result<i32> {
    let data_dir = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let defaults = TrainConfig::default();
    let mut cfg = TrainConfig {
        cell: a.cell.unwrap_or(defaults.cell),
        lambda: a.lambda.unwrap_or(defaults.lambda),
        lr: a.lr.unwrap_or(defaults.lr),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        seed: a.seed.unwrap_or(defaults.seed),
        embed_dim: a.embed_dim.unwrap_or(defaults.embed_dim),
        hidden_dim: a.hidden_dim.unwrap_or(defaults.hidden_dim),
        attention_dim: a.attention_dim,
        arity: TaskArity::Single,
        embeddings: a.embeddings,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    cfg.attention_dim = Some(cfg.attention_dim());
    let dataset = data::load_dataset(&data_dir)?;
    if dataset.is_pair() {
        cfg.arity = TaskArity::Pair;
    }
    create_dir(&out)?;
    let resolved = TrainArgs {
        data: Some(data_dir),
        cell: Some(cfg.cell),
        lambda: Some(cfg.lambda),
        lr: Some(cfg.lr),
        epochs: Some(cfg.epochs),
        batch_size: Some(cfg.batch_size),
        embed_dim: Some(cfg.embed_dim),
        hidden_dim: Some(cfg.hidden_dim),
        attention_dim: cfg.attention_dim,
        embeddings: cfg.embeddings.clone(),
        seed: Some(cfg.seed),
        out: Some(out.clone()),
    };
    config::write_resolved("train", &resolved, &out)?;

    let outcome = match trainer::train(&cfg, &dataset.train, &dataset.val) {
        Ok(o) => o,
        Err(Error::Diverged {
            epoch,
            step,
            reason,
            history,
        }) => {
            trainer::write_history(&out.join(HISTORY_FILE), &history)?;
            eprintln!("error: training diverged at epoch {epoch}, step {step}: {reason}");
            eprintln!(
                "partial history ({} epochs) kept in {}",
                history.len(),
                out.join(HISTORY_FILE).display()
            );
            return Ok(1);
        }
        Err(e) => return Err(e.into()),
    };
    trainer::write_history(&out.join(HISTORY_FILE), &outcome.history)?;
    checkpoint::save_checkpoint(&outcome.model, Some(&cfg), &out.join(CHECKPOINT_FILE))?;
    let (test_acc, test_con) = trainer::evaluate(&outcome.model, &dataset.test)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "best epoch {} val_acc {:.4}; test accuracy {:.4} conicity {:.4}",
        outcome.best_epoch, best.val_acc, test_acc, test_con
    );
    Ok(0)
}

fn analyze_cmd(a: AnalyzeArgs) -> anyhow::Result<i32> {
    let model_path = required(a.model, "model")?;
    let data_dir = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let split = a.split.unwrap_or_else(|| "test".to_string());
    let suite = a.suite.unwrap_or_else(|| "all".to_string());
    let suites: BTreeSet<Suite> = Suite::parse_list(&suite).map_err(|e| usage(e.to_string()))?;
    let defaults = RationaleConfig::default();
    let seed = a.seed.unwrap_or(0);
    let options = AnalysisOptions {
        suites,
        seed,
        n_perms: a.n_perms.unwrap_or(DEFAULT_PERMUTATIONS),
        ig_steps: a.ig_steps.unwrap_or(DEFAULT_IG_STEPS),
        rationale: RationaleConfig {
            alpha_r: a.alpha_r.unwrap_or(defaults.alpha_r),
            epochs: a.rationale_epochs.unwrap_or(defaults.epochs),
            seed,
            ..defaults
        },
    };
    let ckpt = checkpoint::load_checkpoint(&model_path)?;
    let dataset = data::load_dataset(&data_dir)?;
    let examples = dataset.split(&split).ok_or_else(|| {
        usage(format!(
            "unknown split {split:?} (expected one of {})",
            data::SPLITS.join(", ")
        ))
    })?;
    create_dir(&out)?;
    let resolved = AnalyzeArgs {
        model: Some(model_path),
        data: Some(data_dir),
        split: Some(split),
        suite: Some(suite),
        seed: Some(seed),
        n_perms: Some(options.n_perms),
        ig_steps: Some(options.ig_steps),
        alpha_r: Some(options.rationale.alpha_r),
        rationale_epochs: Some(options.rationale.epochs),
        out: Some(out.clone()),
    };
    config::write_resolved("analyze", &resolved, &out)?;

    let report = analyze(&ckpt.model, examples, &dataset.train, &options)?;
    fs::write(out.join(ANALYSIS_JSON), report.to_json()?)?;
    fs::write(out.join(ANALYSIS_CSV), report.to_csv()?)?;
    print!("{}", render::summary_text(&report));
    Ok(0)
}

fn report(a: ReportArgs) -> anyhow::Result<i32> {
    let path = required(a.analysis, "analysis")?;
    let out = required(a.out, "out")?;
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let analysis = AnalysisReport::from_json(&text)
        .map_err(|e| anyhow!("{} is not a valid analysis report: {e}", path.display()))?;
    let plots = out.join("plots");
    create_dir(&plots)?;
    config::write_resolved(
        "report",
        &ReportArgs {
            analysis: Some(path),
            out: Some(out.clone()),
        },
        &out,
    )?;
    let svgs = render::plots(&analysis);
    for (name, svg) in &svgs {
        fs::write(plots.join(name), svg)?;
    }
    fs::write(out.join(REPORT_HTML), render::html(&analysis, &svgs))?;
    println!("wrote {} and {} plots to {}", REPORT_HTML, svgs.len(), out.display());
    Ok(0)
}

fn gradcheck(a: GradcheckArgs) -> anyhow::Result<i32> {
    let seed = a.seed.unwrap_or(0);
    if let Some(out) = &a.out {
        create_dir(out)?;
        config::write_resolved(
            "gradcheck",
            &GradcheckArgs {
                seed: Some(seed),
                ..a.clone()
            },
            out,
        )?;
    }
    let checks = model_gradient_suite(seed, a.inject_bug)?;
    let mut failed = Vec::new();
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<28} max_rel_error {:.3e} {status}", c.component, c.max_rel_error);
        if !c.passed() {
            failed.push(c.component.as_str());
        }
    }
    if failed.is_empty() {
        println!("all {} components within {:e}", checks.len(), GRADCHECK_TOLERANCE);
        Ok(0)
    } else {
        eprintln!("gradient check failed: {}", failed.join(", "));
        Ok(1)
    }
}
