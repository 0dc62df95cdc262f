//! Static HTML and SVG rendering of an [`AnalysisReport`].
//!
//! Every SVG is self-contained (inline styles, no external references), and
//! the HTML page inlines the same SVGs so it can be opened on its own.

use std::fmt::Write as _;

use divattn_core::faithfulness::metrics::Summary;
use divattn_core::faithfulness::report::AnalysisReport;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
/// Width of the max-attention bins in the TVD plot.
pub const TVD_BIN: f64 = 0.05;

pub const TVD_PLOT: &str = "tvd_vs_max_attention.svg";
pub const POS_PLOT: &str = "pos_shares.svg";
pub const ERASURE_PLOT: &str = "erasure_boxplot.svg";

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + v / self.x_max * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - v / self.y_max * (HEIGHT - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn no_data(title: &str) -> String {
    let mut s = svg_open(title);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#666\">no data</text>\n</svg>",
        WIDTH / 2.0,
        HEIGHT / 2.0
    );
    s
}

fn axes(s: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (t * f.x_max, t * f.y_max);
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{xv:.2}</text>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{yv:.2}</text>",
            f.x(xv),
            y0 + 14.0,
            x0 - 4.0,
            f.y(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n<text x=\"12\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 12 {})\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(x_label),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

/// Median permutation TVD against max attention, with per-bin medians.
pub fn tvd_plot(report: &AnalysisReport) -> String {
    let title = "Permutation TVD vs max attention";
    let points: Vec<(f64, f64)> = report
        .examples
        .iter()
        .filter_map(|r| Some((r.max_alpha?, r.median_tvd?)))
        .collect();
    if points.is_empty() {
        return no_data(title);
    }
    let y_max = points.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-3);
    let f = Frame { x_max: 1.0, y_max };
    let mut s = svg_open(title);
    axes(&mut s, &f, "max attention", "median TVD");
    for &(x, y) in &points {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>",
            f.x(x),
            f.y(y)
        );
    }
    let bins = (1.0 / TVD_BIN).round() as usize;
    let mut binned: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for &(x, y) in &points {
        binned[((x / TVD_BIN) as usize).min(bins - 1)].push(y);
    }
    let mut path = String::new();
    for (i, ys) in binned.iter_mut().enumerate() {
        if ys.is_empty() {
            continue;
        }
        ys.sort_by(f64::total_cmp);
        let (cx, cy) = (f.x((i as f64 + 0.5) * TVD_BIN), f.y(quantile(ys, 0.5)));
        let _ = write!(path, "{}{cx:.2},{cy:.2} ", if path.is_empty() { "M" } else { "L" });
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"6\" height=\"6\" fill=\"#d62728\"/>",
            cx - 3.0,
            cy - 3.0
        );
    }
    let _ = writeln!(
        s,
        "<path d=\"{}\" fill=\"none\" stroke=\"#d62728\"/>\n</svg>",
        path.trim_end()
    );
    s
}

/// Attention share next to token frequency for each POS tag.
pub fn pos_plot(report: &AnalysisReport) -> String {
    let title = "Attention share by POS tag";
    let Some(pos) = report.pos.as_ref().filter(|p| !p.is_empty()) else {
        return no_data(title);
    };
    let y_max = pos
        .values()
        .flat_map(|t| [t.attention, t.frequency])
        .fold(0.0, f64::max)
        .max(1e-3);
    let f = Frame { x_max: 1.0, y_max };
    let mut s = svg_open(title);
    axes(&mut s, &f, "", "share");
    let slot = (WIDTH - 2.0 * MARGIN) / pos.len() as f64;
    for (i, (tag, share)) in pos.iter().enumerate() {
        let left = MARGIN + i as f64 * slot;
        let bar = slot * 0.35;
        for (j, (v, colour)) in [(share.attention, "#d62728"), (share.frequency, "#7f7f7f")]
            .into_iter()
            .enumerate()
        {
            let top = f.y(v);
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{bar:.2}\" height=\"{:.2}\" fill=\"{colour}\"/>",
                left + slot * 0.1 + j as f64 * bar,
                HEIGHT - MARGIN - top
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            left + slot / 2.0,
            HEIGHT - MARGIN + 28.0,
            escape(tag)
        );
    }
    let _ = writeln!(
        s,
        "<rect x=\"{0}\" y=\"30\" width=\"10\" height=\"10\" fill=\"#d62728\"/><text x=\"{1}\" y=\"39\">attention</text>\n\
         <rect x=\"{0}\" y=\"44\" width=\"10\" height=\"10\" fill=\"#7f7f7f\"/><text x=\"{1}\" y=\"53\">frequency</text>\n</svg>",
        WIDTH - MARGIN - 70.0,
        WIDTH - MARGIN - 56.0
    );
    s
}

/// Box plots of the fraction of positions erased before the decision flips.
pub fn erasure_plot(report: &AnalysisReport) -> String {
    let title = "Fraction erased before decision flip";
    let groups: Vec<(&str, Vec<f64>)> = [
        (
            "attention",
            report
                .examples
                .iter()
                .filter_map(|r| r.flip_fraction_attention)
                .collect::<Vec<_>>(),
        ),
        (
            "random",
            report.examples.iter().filter_map(|r| r.flip_fraction_random).collect(),
        ),
    ]
    .into_iter()
    .filter(|(_, v)| !v.is_empty())
    .collect();
    if groups.is_empty() {
        return no_data(title);
    }
    let f = Frame { x_max: 1.0, y_max: 1.0 };
    let mut s = svg_open(title);
    axes(&mut s, &f, "", "fraction erased");
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len() as f64;
    for (i, (name, mut values)) in groups.into_iter().enumerate() {
        values.sort_by(f64::total_cmp);
        let [lo, q1, med, q3, hi] = [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| f.y(quantile(&values, q)));
        let cx = MARGIN + (i as f64 + 0.5) * slot;
        let half = slot * 0.2;
        let _ = writeln!(
            s,
            "<line x1=\"{cx:.2}\" y1=\"{lo:.2}\" x2=\"{cx:.2}\" y2=\"{hi:.2}\" stroke=\"black\"/>\n\
             <rect x=\"{:.2}\" y=\"{q3:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#aec7e8\" stroke=\"black\"/>\n\
             <line x1=\"{:.2}\" y1=\"{med:.2}\" x2=\"{:.2}\" y2=\"{med:.2}\" stroke=\"#d62728\" stroke-width=\"2\"/>\n\
             <text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\">{name} (n={})</text>",
            cx - half,
            2.0 * half,
            q1 - q3,
            cx - half,
            cx + half,
            HEIGHT - MARGIN + 28.0,
            values.len()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// All plots as `(file name, svg)` pairs.
pub fn plots(report: &AnalysisReport) -> Vec<(String, String)> {
    vec![
        (TVD_PLOT.to_string(), tvd_plot(report)),
        (POS_PLOT.to_string(), pos_plot(report)),
        (ERASURE_PLOT.to_string(), erasure_plot(report)),
    ]
}

/// Background opacity for a token: α relative to the example's largest α.
pub fn shade(alpha: f64, max_alpha: f64) -> f64 {
    if max_alpha > 0.0 {
        (alpha / max_alpha).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn summary_row(out: &mut String, name: &str, s: &Summary) {
    let _ = writeln!(
        out,
        "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
        escape(name),
        s.n,
        fmt_opt(s.mean),
        fmt_opt(s.median),
        fmt_opt(s.std)
    );
}

pub fn html(report: &AnalysisReport, svgs: &[(String, String)]) -> String {
    let mut h = String::from(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>divattn analysis</title>\n<style>\n\
         body { font-family: sans-serif; margin: 2em; }\n\
         table { border-collapse: collapse; margin-bottom: 1.5em; }\n\
         td, th { border: 1px solid #ccc; padding: 2px 8px; text-align: right; }\n\
         .tok { padding: 1px 3px; margin: 1px; display: inline-block; }\n\
         .ex { margin: 4px 0; }\n\
         .meta { color: #555; font-size: 0.85em; margin-right: 0.5em; }\n\
         </style>\n</head>\n<body>\n<h1>Analysis report</h1>\n",
    );
    let suites: Vec<&str> = report.suites.iter().map(|s| s.name()).collect();
    let _ = writeln!(
        h,
        "<p>seed {}; suites: {}; accuracy {:.4} on {} examples</p>",
        report.seed,
        escape(&suites.join(", ")),
        report.accuracy,
        report.examples.len()
    );
    if report.examples.is_empty() {
        h.push_str(
            "<p class=\"notice\"><strong>no data</strong>: the report contains no examples.</p>\n</body>\n</html>\n",
        );
        return h;
    }

    h.push_str(
        "<h2>Aggregates</h2>\n<table>\n<tr><th>field</th><th>n</th><th>mean</th><th>median</th><th>std</th></tr>\n",
    );
    for (name, s) in &report.aggregates {
        summary_row(&mut h, name, s);
    }
    h.push_str("</table>\n");
    if let Some(b) = &report.conicity_baseline {
        let _ = writeln!(h, "<p>Isotropic conicity baseline: {:.4} ± {:.4}</p>", b.mean, b.std);
    }
    if let Some(err) = report.ig_completeness() {
        let _ = writeln!(h, "<p>Integrated-gradient completeness error: {err:.2e}</p>");
    }
    if let Some(r) = &report.rationale {
        let _ = writeln!(
            h,
            "<h2>Rationales</h2>\n<p>alpha_r {}; full-input accuracy {:.4}; rationale accuracy {:.4}; mean length {}; \
             mean attention {}; empty rationales {}</p>",
            r.config.alpha_r,
            r.full_accuracy,
            r.rationale_accuracy,
            fmt_opt(r.mean_length),
            fmt_opt(r.mean_attention),
            r.missing
        );
    }
    if let Some(pos) = &report.pos {
        h.push_str("<h2>POS shares</h2>\n<table>\n<tr><th>tag</th><th>attention</th><th>frequency</th></tr>\n");
        for (tag, s) in pos {
            let _ = writeln!(
                h,
                "<tr><td>{}</td><td>{:.4}</td><td>{:.4}</td></tr>",
                escape(tag),
                s.attention,
                s.frequency
            );
        }
        h.push_str("</table>\n");
    }

    h.push_str("<h2>Plots</h2>\n");
    for (name, svg) in svgs {
        let _ = writeln!(h, "<figure>\n{svg}<figcaption>{}</figcaption>\n</figure>", escape(name));
    }

    h.push_str("<h2>Attention heatmaps</h2>\n");
    for r in &report.examples {
        let max = r.alpha.iter().copied().fold(0.0, f64::max);
        let _ = write!(
            h,
            "<div class=\"ex\"><span class=\"meta\">{} (label {}, predicted {})</span>",
            escape(&r.id),
            r.label,
            r.predicted
        );
        for (tok, &a) in r.tokens.iter().zip(&r.alpha) {
            let _ = write!(
                h,
                "<span class=\"tok\" title=\"{a:.4}\" style=\"background-color: rgba(214, 39, 40, {:.3})\">{}</span>",
                shade(a, max),
                escape(tok)
            );
        }
        h.push_str("</div>\n");
    }
    h.push_str("</body>\n</html>\n");
    h
}

/// Plain-text summary printed by `analyze`.
pub fn summary_text(report: &AnalysisReport) -> String {
    let mut t = format!(
        "accuracy {:.4} on {} examples\n",
        report.accuracy,
        report.examples.len()
    );
    for (name, s) in &report.aggregates {
        if s.n > 0 {
            let _ = writeln!(
                t,
                "{name:<26} mean {} median {} std {} (n={})",
                fmt_opt(s.mean),
                fmt_opt(s.median),
                fmt_opt(s.std),
                s.n
            );
        }
    }
    if let Some(err) = report.ig_completeness() {
        let _ = writeln!(t, "ig completeness error {err:.3e}");
    }
    if let Some(r) = &report.rationale {
        let _ = writeln!(
            t,
            "rationale accuracy {:.4} (full {:.4}) length {} attention {}",
            r.rationale_accuracy,
            r.full_accuracy,
            fmt_opt(r.mean_length),
            fmt_opt(r.mean_attention)
        );
    }
    if let Some(pos) = &report.pos {
        for (tag, s) in pos {
            let _ = writeln!(
                t,
                "pos {tag:<8} attention {:.4} frequency {:.4}",
                s.attention, s.frequency
            );
        }
    }
    t
}
