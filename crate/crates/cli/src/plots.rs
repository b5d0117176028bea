//! Hand-written SVG figures: ROC curves, accuracy and loss per round,
//! EER/FAR/FRR per round and an accuracy comparison. Every series is the
//! mean over seeds with a shaded min/max band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fedbio::metrics::{RocPoint, ThresholdPolicy};

use crate::config::Method;
use crate::experiment::{metric_value, MethodRun, ResultsBundle};
use crate::output::{ensure_dir, OutputError};

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 360.0;
const LEGEND_ROW_H: f64 = 18.0;
const LEGEND_ENTRY_W: f64 = 130.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 52.0;
const ROC_GRID: usize = 101;

pub fn method_color(m: Method) -> &'static str {
    match m {
        Method::Attention => "#1f77b4",
        Method::FedAvg => "#ff7f0e",
        Method::LocalOnly => "#2ca02c",
        Method::Centralized => "#d62728",
        Method::AttentionDp => "#9467bd",
    }
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// A seed-averaged line: `mean[i]` with band `[lo[i], hi[i]]` at `x[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub method: Method,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Series {
    /// Aggregates several curves sampled at the same x positions.
    fn from_samples(method: Method, x: Vec<f64>, samples: Vec<Vec<f64>>) -> Self {
        let mut s = Series {
            method,
            x,
            mean: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
        };
        for vals in samples {
            let finite: Vec<f64> = vals.into_iter().filter(|v| v.is_finite()).collect();
            let n = finite.len().max(1) as f64;
            s.mean.push(finite.iter().sum::<f64>() / n);
            s.lo.push(finite.iter().copied().fold(f64::INFINITY, f64::min));
            s.hi.push(finite.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        s
    }
}

struct Panel {
    title: String,
    xlabel: &'static str,
    ylabel: String,
    series: Vec<Series>,
    /// Fixed y range, or `None` to fit the data.
    y_range: Option<(f64, f64)>,
}

fn runs_by_method(runs: &[MethodRun]) -> BTreeMap<Method, Vec<&MethodRun>> {
    let mut by: BTreeMap<Method, Vec<&MethodRun>> = BTreeMap::new();
    for r in runs.iter().filter(|r| !r.records.is_empty()) {
        by.entry(r.method).or_default().push(r);
    }
    by
}

/// Per-round series of one metric for every method.
pub fn round_series(runs: &[MethodRun], metric: &str) -> Vec<Series> {
    runs_by_method(runs)
        .into_iter()
        .map(|(method, runs)| {
            let mut per_round: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for run in runs {
                for r in &run.records {
                    per_round.entry(r.round).or_default().push(metric_value(r, metric));
                }
            }
            let x = per_round.keys().map(|&r| r as f64).collect();
            Series::from_samples(method, x, per_round.into_values().collect())
        })
        .collect()
}

/// True positive rate of a monotone ROC at false accept rate `far`.
fn tpr_at(roc: &[RocPoint], far: f64) -> f64 {
    roc.iter()
        .filter(|p| p.far <= far + 1e-12)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

/// ROC series on a common FAR grid. Per seed the curves of all final models
/// (one per client for local-only) are averaged first.
pub fn roc_series(runs: &[MethodRun]) -> Vec<Series> {
    let grid: Vec<f64> = (0..ROC_GRID).map(|i| i as f64 / (ROC_GRID - 1) as f64).collect();
    runs_by_method(runs)
        .into_iter()
        .filter_map(|(method, runs)| {
            let per_seed: Vec<Vec<f64>> = runs
                .iter()
                .filter(|r| !r.final_rocs.is_empty())
                .map(|r| {
                    grid.iter()
                        .map(|&f| {
                            r.final_rocs.iter().map(|roc| tpr_at(roc, f)).sum::<f64>() / r.final_rocs.len() as f64
                        })
                        .collect()
                })
                .collect();
            if per_seed.is_empty() {
                return None;
            }
            let samples = (0..grid.len())
                .map(|i| per_seed.iter().map(|s| s[i]).collect())
                .collect();
            Some(Series::from_samples(method, grid.clone(), samples))
        })
        .collect()
}

fn extent(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    (lo <= hi).then_some((lo, hi))
}

fn padded((lo, hi): (f64, f64)) -> (f64, f64) {
    if hi - lo < 1e-9 {
        let pad = lo.abs().max(1.0) * 0.05;
        (lo - pad, hi + pad)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64, span: f64) -> String {
    let decimals = if span >= 10.0 {
        0
    } else if span >= 1.0 {
        1
    } else if span >= 0.1 {
        2
    } else {
        3
    };
    format!("{v:.decimals$}")
}

fn polyline(points: impl Iterator<Item = (f64, f64)>) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.enumerate() {
        let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
    }
    d.trim_end().to_string()
}

fn render_panel(svg: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let all_x = panel.series.iter().flat_map(|s| s.x.iter().copied());
    let (x0, x1) = match extent(all_x) {
        Some((a, b)) if b > a => (a, b),
        Some((a, _)) => (a - 0.5, a + 0.5),
        None => (0.0, 1.0),
    };
    let (y0, y1) = panel.y_range.unwrap_or_else(|| {
        let ys = panel
            .series
            .iter()
            .flat_map(|s| s.lo.iter().chain(&s.hi).chain(&s.mean).copied());
        padded(extent(ys).unwrap_or((0.0, 1.0)))
    });
    let (left, top) = (ox + MARGIN_L, oy + MARGIN_T);
    let (w, h) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| top + h - (y - y0) / (y1 - y0) * h;

    let _ = writeln!(
        svg,
        r#"<g class="panel" data-ymin="{y0}" data-ymax="{y1}" data-xmin="{x0}" data-xmax="{x1}">"#
    );
    let _ = writeln!(
        svg,
        r##"<rect class="plot-area" x="{left:.2}" y="{top:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text class="title" x="{:.2}" y="{:.2}" text-anchor="middle" font-size="15">{}</text>"#,
        left + w / 2.0,
        oy + 22.0,
        escape(&panel.title)
    );
    for i in 0..=4 {
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<path d="M{:.2},{:.2} L{:.2},{:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"##,
            left,
            py(yv),
            left + w,
            py(yv),
            left - 6.0,
            py(yv) + 4.0,
            tick_label(yv, y1 - y0)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            px(xv),
            top + h + 16.0,
            tick_label(xv, x1 - x0)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text class="xlabel" x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        left + w / 2.0,
        top + h + 38.0,
        escape(panel.xlabel)
    );
    let (lx, ly) = (ox + 16.0, top + h / 2.0);
    let _ = writeln!(
        svg,
        r#"<text class="ylabel" x="{lx:.2}" y="{ly:.2}" text-anchor="middle" font-size="13" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
        escape(&panel.ylabel)
    );
    for s in &panel.series {
        let color = method_color(s.method);
        let upper = s.x.iter().zip(&s.hi).map(|(&x, &y)| (px(x), py(y)));
        let lower = s.x.iter().zip(&s.lo).rev().map(|(&x, &y)| (px(x), py(y)));
        let band = polyline(upper.chain(lower));
        if !band.is_empty() {
            let _ = writeln!(
                svg,
                r#"<path class="band" d="{band} Z" fill="{color}" fill-opacity="0.18" stroke="none"/>"#
            );
        }
        let line = polyline(s.x.iter().zip(&s.mean).map(|(&x, &y)| (px(x), py(y))));
        let _ = writeln!(
            svg,
            r#"<path class="series" data-method="{}" d="{line}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            s.method
        );
    }
    svg.push_str("</g>\n");
}

fn render_figure(title: &str, panels: &[Panel]) -> String {
    let mut methods: Vec<Method> = panels.iter().flat_map(|p| p.series.iter().map(|s| s.method)).collect();
    methods.sort();
    methods.dedup();
    let width = PANEL_W * panels.len() as f64;
    let per_row = (((width - 20.0) / LEGEND_ENTRY_W) as usize).max(1);
    let legend_h = LEGEND_ROW_H * methods.len().div_ceil(per_row).max(1) as f64;
    let top = 36.0 + legend_h;
    let height = PANEL_H + top;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text class="figure-title" x="{:.2}" y="20" text-anchor="middle" font-size="17">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    svg.push_str("<g class=\"legend\">\n");
    for (i, m) in methods.iter().enumerate() {
        let x = 20.0 + LEGEND_ENTRY_W * (i % per_row) as f64;
        let y = 34.0 + LEGEND_ROW_H * (i / per_row) as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{y}" width="18" height="10" fill="{}"/><text class="legend-entry" x="{}" y="{}" font-size="12">{}</text>"#,
            method_color(*m),
            x + 24.0,
            y + 10.0,
            escape(m.name())
        );
    }
    svg.push_str("</g>\n");
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut svg, p, PANEL_W * i as f64, top);
    }
    svg.push_str("</svg>\n");
    svg
}

fn round_panel(runs: &[MethodRun], metric: &str, title: &str, ylabel: &str) -> Panel {
    Panel {
        title: title.to_string(),
        xlabel: "round",
        ylabel: ylabel.to_string(),
        series: round_series(runs, metric),
        y_range: None,
    }
}

/// Writes `roc.svg`, `accuracy_loss.svg`, `eer_far_frr.svg` and
/// `accuracy_comparison.svg`. A bundle without any records writes nothing.
pub fn emit_plots(bundle: &ResultsBundle, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    if !bundle.has_records() {
        log::warn!("no round records to plot; skipping figures");
        return Ok(Vec::new());
    }
    ensure_dir(dir)?;
    let runs = &bundle.runs;
    let policy = match bundle.config.fed.threshold_policy {
        ThresholdPolicy::EerThreshold => "EER threshold",
        ThresholdPolicy::BestAccuracy => "best threshold",
    };
    let accuracy_label = format!("accuracy ({policy})");
    let figures = [
        (
            "roc.svg",
            render_figure(
                "ROC curves of the final models",
                &[Panel {
                    title: "ROC".into(),
                    xlabel: "false accept rate",
                    ylabel: "true accept rate".into(),
                    series: roc_series(runs),
                    y_range: Some((0.0, 1.0)),
                }],
            ),
        ),
        (
            "accuracy_loss.svg",
            render_figure(
                "Accuracy and loss per round",
                &[
                    round_panel(runs, "accuracy", "Accuracy", &accuracy_label),
                    round_panel(runs, "loss", "Loss", "mean contrastive loss"),
                ],
            ),
        ),
        (
            "eer_far_frr.svg",
            render_figure(
                "EER, FAR and FRR per round",
                &[
                    round_panel(runs, "eer", "EER", "equal error rate"),
                    round_panel(runs, "far", "FAR", "false accept rate"),
                    round_panel(runs, "frr", "FRR", "false reject rate"),
                ],
            ),
        ),
        (
            "accuracy_comparison.svg",
            render_figure(
                "Accuracy of the methods per round",
                &[round_panel(runs, "accuracy", "Accuracy", &accuracy_label)],
            ),
        ),
    ];
    let mut written = Vec::new();
    for (name, svg) in figures {
        let path = dir.join(name);
        fs::write(&path, svg).map_err(|source| OutputError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
