//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The desk-scale experiments train vanilla-LSTM classifiers with λ = 0 and
//! λ = 0.5 on the synthetic keyword task (n = 1000, data seed 7, training
//! seed 1, 20 epochs, batch 16, lr 0.001) through the `divattn` binary, then
//! compare their analyses.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use divattn_core::encoders::{encode_sequence, CellKind, LstmParams};
use divattn_core::faithfulness::report::AnalysisReport;
use divattn_core::geometry::{conicity, isotropic_baseline_conicity, VectorSet};
use divattn_core::rng::stream;
use divattn_core::tensor::{Tape, Tensor};

const TRAIN_FLAGS: [&str; 10] = [
    "--cell",
    "vanilla",
    "--lr",
    "0.001",
    "--epochs",
    "20",
    "--batch-size",
    "16",
    "--seed",
    "1",
];

struct Criterion {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn divattn(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_divattn"))
        .args(args)
        .env_remove("DIVATTN_THREADS")
        .output()
        .expect("spawn divattn");
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (out.status.code().unwrap_or(-1), text)
}

fn must(args: &[&str]) -> String {
    let (code, text) = divattn(args);
    assert_eq!(code, 0, "divattn {} failed:\n{text}", args.join(" "));
    text
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

struct Run {
    report: AnalysisReport,
    train_time: Duration,
    analyze_time: Duration,
}

/// synth → train → analyze → report for one λ under `root`.
fn pipeline(root: &Path, lambda: &str) -> Run {
    let data = root.join("data");
    if !data.exists() {
        must(&[
            "synth",
            "--task",
            "keyword",
            "--n",
            "1000",
            "--seed",
            "7",
            "--out",
            s(&data),
        ]);
    }
    let dir = root.join(format!("lambda-{lambda}"));
    let model = dir.join("model");
    let analysis = dir.join("analysis");
    let t = Instant::now();
    let mut args = vec!["train", "--data", s(&data), "--lambda", lambda, "--out", s(&model)];
    args.extend(TRAIN_FLAGS);
    must(&args);
    let train_time = t.elapsed();
    let t = Instant::now();
    let ckpt = model.join("checkpoint.bin");
    must(&[
        "analyze",
        "--model",
        s(&ckpt),
        "--data",
        s(&data),
        "--suite",
        "all",
        "--seed",
        "1",
        "--out",
        s(&analysis),
    ]);
    let analyze_time = t.elapsed();
    let json = analysis.join("analysis.json");
    must(&["report", "--analysis", s(&json), "--out", s(&dir.join("report"))]);
    let report = AnalysisReport::from_json(&fs::read_to_string(&json).unwrap()).expect("valid report");
    Run {
        report,
        train_time,
        analyze_time,
    }
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn agg(r: &AnalysisReport, field: &str, median: bool) -> f64 {
    let s = &r.aggregates[field];
    let v = if median { s.median } else { s.mean };
    v.unwrap_or(f64::NAN)
}

fn gradient_correctness() -> Criterion {
    let t = Instant::now();
    let (code, text) = divattn(&["gradcheck", "--seed", "0"]);
    let elapsed = t.elapsed();
    let lines = text.lines().filter(|l| l.contains("max_rel_error")).count();
    Criterion {
        id: 1,
        name: "gradient correctness",
        pass: code == 0 && lines == 4 && elapsed < Duration::from_secs(30),
        detail: format!(
            "exit {code}, {lines} components, {:.1}s; {}",
            elapsed.as_secs_f64(),
            text.lines()
                .filter(|l| l.contains("max_rel_error"))
                .collect::<Vec<_>>()
                .join("; ")
        ),
    }
}

fn orthogonality() -> Criterion {
    let mut rng = stream(0, &["acceptance", "orthogonality"]);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..100 {
        let params = LstmParams::random(8, 8, &mut rng);
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let xs: Vec<_> = (0..10)
            .map(|_| tape.constant(Tensor::vector((0..8).map(|_| rng.random_range(-2.0..2.0)).collect())))
            .collect();
        let hs = encode_sequence(&tape, &xs, &p, CellKind::Orthogonal).unwrap();
        let mut sum = vec![0.0; 8];
        for (t, h) in hs.iter().enumerate() {
            let h = h.value();
            let h = h.data();
            if t >= 1 {
                let dot: f64 = h.iter().zip(&sum).map(|(a, b)| a * b).sum();
                let nh = h.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ns = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nh > 0.0 && ns > 0.0 {
                    worst = worst.max(dot.abs() / (nh * ns));
                }
                checked += 1;
            }
            sum.iter_mut().zip(h).for_each(|(s, v)| *s += v);
        }
    }
    Criterion {
        id: 2,
        name: "orthogonality invariant",
        pass: worst < 1e-9 && checked == 900,
        detail: format!("max |cos(h_t, sum of earlier h)| = {worst:.2e} over {checked} states"),
    }
}

fn conicity_oracles() -> Criterion {
    let c = |rows: &[Vec<f64>]| conicity(&VectorSet::from_rows(rows).unwrap()).unwrap();
    let same = c(&vec![vec![0.3, -1.2, 2.0]; 5]);
    let ortho = c(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let three = c(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]);
    let base = isotropic_baseline_conicity(2, 2, 10_000, 0).unwrap().mean;
    let oracle = 2.0 / std::f64::consts::PI;
    let pass = (same - 1.0).abs() <= 1e-12
        && (ortho - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-9
        && (three - 1.0 / 3.0).abs() <= 1e-9
        && (base - oracle).abs() <= 0.01;
    Criterion {
        id: 3,
        name: "conicity oracles",
        pass,
        detail: format!("identical {same:.15}, orthogonal pair {ortho:.10}, three {three:.10}, isotropic d=2 m=2 {base:.4} vs {oracle:.4}"),
    }
}

fn main() {
    let mut results = vec![gradient_correctness(), orthogonality(), conicity_oracles()];

    let work = tempfile::tempdir().expect("temp dir");
    let root = work.path().join("run");
    let plain = pipeline(&root, "0");
    let diverse = pipeline(&root, "0.5");
    let (p, d) = (&plain.report, &diverse.report);

    let (c0, c5) = (agg(p, "conicity", false), agg(d, "conicity", false));
    let (a0, a5) = (p.accuracy, d.accuracy);
    let train_time = plain.train_time + diverse.train_time;
    results.push(Criterion {
        id: 4,
        name: "diversity effect",
        pass: c5 <= 0.5 * c0 && (a5 - a0).abs() <= 0.1 * a0 && train_time < Duration::from_secs(300),
        detail: format!(
            "conicity {c0:.4} -> {c5:.4}, accuracy {a0:.4} -> {a5:.4}, training {:.1}s",
            train_time.as_secs_f64()
        ),
    });

    let (t0, t5) = (agg(p, "median_tvd", true), agg(d, "median_tvd", true));
    results.push(Criterion {
        id: 5,
        name: "permutation sensitivity",
        pass: t5 > t0,
        detail: format!("median permutation TVD {t0:.4} (λ=0) vs {t5:.4} (λ=0.5)"),
    });

    let med = |r: &AnalysisReport, f| agg(r, f, true);
    let (e0, e5) = (med(p, "flip_fraction_attention"), med(d, "flip_fraction_attention"));
    let (r0, r5) = (med(p, "flip_fraction_random"), med(d, "flip_fraction_random"));
    results.push(Criterion {
        id: 6,
        name: "erasure",
        pass: e5 <= e0 && e0 <= r0 && e5 <= r5,
        detail: format!("attention-ranked median {e0:.4} vs {e5:.4}; random-ranked {r0:.4} vs {r5:.4}"),
    });

    let (g0, g5) = (agg(p, "gradient_pearson", false), agg(d, "gradient_pearson", false));
    let (j0, j5) = (agg(p, "gradient_js", false), agg(d, "gradient_js", false));
    let ig_max = |r: &AnalysisReport| {
        r.examples
            .iter()
            .map(|e| e.ig_completeness_error().unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    };
    let (i0, i5) = (ig_max(p), ig_max(d));
    results.push(Criterion {
        id: 7,
        name: "attribution agreement",
        pass: g5 > g0 && j5 <= j0 && i0 <= 0.01 && i5 <= 0.01,
        detail: format!(
            "mean Pearson {g0:.4} vs {g5:.4}; mean JS {j0:.4} vs {j5:.4}; max IG completeness error {i0:.2e}, {i5:.2e}"
        ),
    });

    let rat = |r: &AnalysisReport| r.rationale.clone().expect("rationale suite ran");
    let (q0, q5) = (rat(p), rat(d));
    let ok = |q: &divattn_core::faithfulness::report::RationaleOverview| {
        (q.rationale_accuracy - q.full_accuracy).abs() <= 0.05 && q.mean_length.is_some_and(|l| l < 0.5)
    };
    let (m0, m5) = (
        q0.mean_attention.unwrap_or(f64::NAN),
        q5.mean_attention.unwrap_or(f64::NAN),
    );
    let analyze_time = plain.analyze_time + diverse.analyze_time;
    results.push(Criterion {
        id: 8,
        name: "rationales",
        pass: ok(&q0) && ok(&q5) && m5 > m0 && analyze_time < Duration::from_secs(600),
        detail: format!(
            "accuracy rationale/full {:.4}/{:.4} and {:.4}/{:.4}; length {:.4}, {:.4}; attention {m0:.4} vs {m5:.4}; analysis {:.1}s",
            q0.rationale_accuracy,
            q0.full_accuracy,
            q5.rationale_accuracy,
            q5.full_accuracy,
            q0.mean_length.unwrap_or(f64::NAN),
            q5.mean_length.unwrap_or(f64::NAN),
            analyze_time.as_secs_f64()
        ),
    });

    let punct = |r: &AnalysisReport| {
        r.pos
            .as_ref()
            .and_then(|m| m.get("PUNCT"))
            .map_or(f64::NAN, |t| t.attention)
    };
    let (u0, u5) = (punct(p), punct(d));
    results.push(Criterion {
        id: 9,
        name: "POS shift",
        pass: u5 < u0,
        detail: format!("PUNCT attention share {u0:.4} (λ=0) vs {u5:.4} (λ=0.5)"),
    });

    // Same paths are reused so the resolved configs match too.
    let first = work.path().join("first");
    fs::rename(&root, &first).unwrap();
    pipeline(&root, "0.5");
    let again = files(&root);
    let before = files(&first);
    let differing: Vec<String> = again
        .iter()
        .filter(|(path, bytes)| before.get(*path) != Some(*bytes))
        .map(|(path, _)| path.display().to_string())
        .collect();
    results.push(Criterion {
        id: 10,
        name: "determinism",
        pass: differing.is_empty() && !again.is_empty(),
        detail: if differing.is_empty() {
            format!("{} output files byte-identical", again.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    });

    let mut failed = 0;
    for c in &results {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!c.pass);
        println!("{tag} {:>2} {}: {}", c.id, c.name, c.detail);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
