//! SVG learning-curve chart and a plain-text summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::curve::{sig6, LearningCurve};
use crate::error::{Error, Result};
use crate::run::{AGGREGATE_CSV, CONFIG_FILE};
use crate::thresholds::score_threshold;

pub const REPORT_SVG: &str = "report.svg";
pub const SUMMARY_TXT: &str = "summary.txt";

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Mean lines with ±std bands, one colour per curve, legend on the right.
pub fn render_svg(curves: &[LearningCurve], threshold: Option<f64>) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::Curve("nothing to plot".into()));
    }
    for c in curves {
        c.validate()?;
    }
    let max_step = curves.iter().flat_map(|c| c.rows.last()).map(|r| r.step).max().unwrap_or(0).max(1) as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in curves.iter().flat_map(|c| &c.rows) {
        lo = lo.min(r.mean() - r.std());
        hi = hi.max(r.mean() + r.std());
    }
    if let Some(t) = threshold {
        lo = lo.min(t);
        hi = hi.max(t);
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |step: u64| LEFT + plot_w * step as f64 / max_step;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let step = (max_step * f).round() as u64;
        let v = lo + (hi - lo) * f;
        writeln!(
            svg,
            r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="middle">{step}</text>"#,
            x(step),
            HEIGHT - BOTTOM + 18.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0,
            sig6((v * 100.0).round() / 100.0)
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">environment steps</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">evaluation score</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .unwrap();
    if let Some(t) = threshold {
        writeln!(
            svg,
            r##"<line class="threshold" x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#888" stroke-dasharray="6 4"/>"##,
            LEFT + plot_w,
            y(t),
            y(t)
        )
        .unwrap();
    }

    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let upper = c.rows.iter().map(|r| format!("{:.2},{:.2}", x(r.step), y(r.mean() + r.std())));
        let lower = c.rows.iter().rev().map(|r| format!("{:.2},{:.2}", x(r.step), y(r.mean() - r.std())));
        let band: Vec<String> = upper.chain(lower).collect();
        writeln!(
            svg,
            r#"<polygon class="band" points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        )
        .unwrap();
        let line: Vec<String> = c.rows.iter().map(|r| format!("{:.2},{:.2}", x(r.step), y(r.mean()))).collect();
        writeln!(
            svg,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            line.join(" ")
        )
        .unwrap();
        let ly = TOP + 10.0 + 20.0 * i as f64;
        writeln!(
            svg,
            r#"<g class="legend"><rect x="{:.1}" y="{:.1}" width="14" height="10" fill="{colour}"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            WIDTH - RIGHT + 16.0,
            ly - 9.0,
            WIDTH - RIGHT + 36.0,
            ly,
            escape(&c.label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn summary_text(curves: &[LearningCurve], threshold: Option<f64>) -> String {
    let mut out = String::new();
    match threshold {
        Some(t) => writeln!(out, "score threshold: {}", sig6(t)).unwrap(),
        None => writeln!(out, "score threshold: none").unwrap(),
    }
    writeln!(out, "steps count environment steps of the actor threads; SIL updates are not counted").unwrap();
    for c in curves {
        let last = c.rows.last().expect("validated curves are nonempty");
        let reached = match threshold.map(|t| c.steps_to_threshold(t)) {
            Some(Some(step)) => step.to_string(),
            Some(None) => "not reached".into(),
            None => "n/a".into(),
        };
        writeln!(
            out,
            "{}: final mean {} ± {} at step {} over {} seeds; steps to threshold: {reached}",
            c.label,
            sig6(last.mean()),
            sig6(last.std()),
            last.step,
            c.seeds.len()
        )
        .unwrap();
    }
    out
}

/// Loads the aggregate curve of each run directory, labelled from its config.
pub fn load_runs(run_dirs: &[PathBuf]) -> Result<Vec<(ExperimentConfig, LearningCurve)>> {
    run_dirs
        .iter()
        .map(|dir| {
            let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
            let (mut curve, _) = LearningCurve::read_csv(&dir.join(AGGREGATE_CSV))?;
            curve.label = config.label();
            Ok((config, curve))
        })
        .collect()
}

/// Writes `report.svg` and `summary.txt` into `out_dir` and returns the summary.
pub fn emit_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<String> {
    let runs = load_runs(run_dirs)?;
    let Some((first, _)) = runs.first() else {
        return Err(Error::Curve("no runs to report".into()));
    };
    if runs.iter().any(|(c, _)| c.env != first.env) {
        return Err(Error::Config("a report covers a single environment".into()));
    }
    let threshold = Some(score_threshold(first.env));
    let curves: Vec<LearningCurve> = runs.into_iter().map(|(_, c)| c).collect();
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(REPORT_SVG), render_svg(&curves, threshold)?)?;
    let summary = summary_text(&curves, threshold);
    std::fs::write(out_dir.join(SUMMARY_TXT), &summary)?;
    Ok(summary)
}
