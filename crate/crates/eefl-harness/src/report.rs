//! Post-hoc reporting: per-exit summaries, run comparison, and SVG curve
//! plots rendered without any plotting dependency.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use crate::metrics::RoundMetrics;

#[derive(Clone, Debug, PartialEq)]
pub struct ExitSummary {
    /// 1-based exit index.
    pub exit: usize,
    pub final_loss: f64,
    pub best_loss: f64,
    pub final_err: f64,
    pub best_err: f64,
    /// Earliest evaluation round whose loss is at or below the threshold.
    pub rounds_to_threshold: Option<u64>,
}

/// Earliest evaluation round where `exit`'s (0-based) loss drops to
/// `threshold` or below.
pub fn rounds_to_threshold(metrics: &[RoundMetrics], exit: usize, threshold: f64) -> Option<u64> {
    metrics
        .iter()
        .find(|m| m.per_exit_loss.get(exit).is_some_and(|&l| l <= threshold))
        .map(|m| m.round)
}

pub fn summarize(metrics: &[RoundMetrics], threshold: Option<f64>) -> Vec<ExitSummary> {
    let Some(last) = metrics.last() else {
        return Vec::new();
    };
    (0..last.exits())
        .map(|exit| {
            let best_loss = metrics
                .iter()
                .filter_map(|m| m.per_exit_loss.get(exit))
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let best_err = metrics
                .iter()
                .filter_map(|m| m.per_exit_err.get(exit))
                .cloned()
                .fold(f64::INFINITY, f64::min);
            ExitSummary {
                exit: exit + 1,
                final_loss: last.per_exit_loss[exit],
                best_loss,
                final_err: last.per_exit_err[exit],
                best_err,
                rounds_to_threshold: threshold.and_then(|t| rounds_to_threshold(metrics, exit, t)),
            }
        })
        .collect()
}

pub fn render_summary(metrics: &[RoundMetrics], threshold: Option<f64>) -> String {
    let summaries = summarize(metrics, threshold);
    if summaries.is_empty() {
        return "no rounds recorded\n".to_string();
    }
    let last = metrics.last().unwrap();
    let mut out = String::new();
    writeln!(
        out,
        "rounds evaluated: {} (final round {})",
        metrics.len(),
        last.round
    )
    .unwrap();
    writeln!(
        out,
        "exit  final_loss   best_loss  final_err   best_err  rounds_to_thr"
    )
    .unwrap();
    for s in &summaries {
        let thr = s
            .rounds_to_threshold
            .map(|r| r.to_string())
            .unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:>4}  {:>10.6}  {:>10.6}  {:>9.4}  {:>9.4}  {:>13}",
            s.exit, s.final_loss, s.best_loss, s.final_err, s.best_err, thr
        )
        .unwrap();
    }
    out
}

/// Per-exit final deltas between two runs (b relative to a).
pub fn render_comparison(a: &[RoundMetrics], b: &[RoundMetrics]) -> String {
    let (sa, sb) = (summarize(a, None), summarize(b, None));
    if sa.is_empty() || sb.is_empty() {
        return "no rounds recorded in one of the runs\n".to_string();
    }
    let mut out = String::new();
    writeln!(
        out,
        "exit  loss_a      loss_b      delta       err_a    err_b    delta"
    )
    .unwrap();
    for (x, y) in sa.iter().zip(&sb) {
        writeln!(
            out,
            "{:>4}  {:>10.6}  {:>10.6}  {:>+10.6}  {:>7.4}  {:>7.4}  {:>+7.4}",
            x.exit,
            x.final_loss,
            y.final_loss,
            y.final_loss - x.final_loss,
            x.final_err,
            y.final_err,
            y.final_err - x.final_err,
        )
        .unwrap();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotMetric {
    Loss,
    TokenErr,
}

impl PlotMetric {
    fn label(self) -> &'static str {
        match self {
            PlotMetric::Loss => "loss",
            PlotMetric::TokenErr => "token_err",
        }
    }

    fn value(self, m: &RoundMetrics, exit: usize) -> f64 {
        match self {
            PlotMetric::Loss => m.per_exit_loss[exit],
            PlotMetric::TokenErr => m.per_exit_err[exit],
        }
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Render one metric as per-exit polylines in a self-contained SVG.
pub fn render_svg(metrics: &[RoundMetrics], metric: PlotMetric) -> String {
    let (width, height) = (720.0, 480.0);
    let (left, right, top, bottom) = (64.0, 16.0, 24.0, 44.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    )
    .unwrap();

    if metrics.is_empty() {
        writeln!(out, r#"<text x="20" y="40">no rounds recorded</text>"#).unwrap();
        out.push_str("</svg>\n");
        return out;
    }

    let exits = metrics.last().unwrap().exits();
    let x_max = metrics.last().unwrap().round.max(1) as f64;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for m in metrics {
        for exit in 0..exits {
            let v = metric.value(m, exit);
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if y_max - y_min < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_lo, y_hi) = (y_min - pad, y_max + pad);

    let x_of = |round: u64| left + plot_w * round as f64 / x_max;
    let y_of = |v: f64| top + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo));

    // Axes and tick labels.
    writeln!(
        out,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h
    )
    .unwrap();
    writeln!(
        out,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + plot_h
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">round</text>"#,
        left + plot_w / 2.0,
        height - 8.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{:.4}</text>"#,
        left - 6.0,
        top + 10.0,
        y_hi
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{:.4}</text>"#,
        left - 6.0,
        top + plot_h,
        y_lo
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">0</text>"#,
        left,
        height - 26.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        left + plot_w,
        height - 26.0,
        x_max as u64
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="16" font-size="13">{} per exit</text>"#,
        left,
        metric.label()
    )
    .unwrap();

    for exit in 0..exits {
        let color = PALETTE[exit % PALETTE.len()];
        let points: Vec<String> = metrics
            .iter()
            .map(|m| format!("{:.2},{:.2}", x_of(m.round), y_of(metric.value(m, exit))))
            .collect();
        writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">exit {}</text>"#,
            left + plot_w - 52.0,
            top + 16.0 * (exit as f64 + 1.0),
            exit + 1
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Write `loss.svg` and `token_err.svg` into `dir`.
pub fn write_plots(dir: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("loss.svg"), render_svg(metrics, PlotMetric::Loss))?;
    std::fs::write(
        dir.join("token_err.svg"),
        render_svg(metrics, PlotMetric::TokenErr),
    )?;
    Ok(())
}
