//! Static SVG charts: loss curves from a loss log, bars from an ablation
//! report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dme_core::eval::{parse_ablation, ReportFormat};
use dme_core::planner::parse_loss_log_csv;

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN
    )
}

fn y_label(svg: &mut String, max: f64) {
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{max:.3}</text>",
        MARGIN - 4.0,
        MARGIN + 4.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">0</text>",
        MARGIN - 4.0,
        H - MARGIN + 4.0
    );
}

/// Line chart of every loss term per epoch.
pub fn loss_svg(csv: &str) -> Result<String> {
    let log = parse_loss_log_csv(csv).context("reading loss log")?;
    if log.is_empty() {
        bail!("loss log has no epochs");
    }
    let series: [(&str, Vec<f64>); 4] = [
        ("total", log.iter().map(|e| e.total).collect()),
        ("imitation", log.iter().map(|e| e.imitation).collect()),
        ("collision", log.iter().map(|e| e.collision).collect()),
        ("consistency", log.iter().map(|e| e.consistency).collect()),
    ];
    let max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let n = log.len();
    let x = |i: usize| MARGIN + (W - 2.0 * MARGIN) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let y = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v / max);
    let mut svg = header("training loss per epoch");
    y_label(&mut svg, max);
    for (k, (name, values)) in series.iter().enumerate() {
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.1},{:.1}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            COLORS[k],
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{name}</text>",
            W - MARGIN - 80.0,
            MARGIN + 14.0 * k as f64,
            COLORS[k]
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Grouped bars of L2, collision rate and mismatch per ablation row.
pub fn ablation_svg(csv: &str) -> Result<String> {
    let rows = parse_ablation(csv, ReportFormat::Csv).context("reading ablation report")?;
    if rows.is_empty() {
        bail!("ablation report has no rows");
    }
    let mut svg = header("ablation: L2 (m), collision (%), mismatch (%)");
    let metrics = ["L2", "Col.", "Mism."];
    let group = (W - 2.0 * MARGIN) / rows.len() as f64;
    let bar = group / (metrics.len() as f64 + 1.0);
    for m in 0..metrics.len() {
        let max = rows.iter().map(|r| r.1[m]).fold(0.0_f64, f64::max).max(1e-12);
        for (g, (method, values)) in rows.iter().enumerate() {
            let h = (H - 2.0 * MARGIN) * values[m] / max;
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"><title>{method} {}: {:.2}</title></rect>",
                MARGIN + group * g as f64 + bar * (m as f64 + 0.5),
                H - MARGIN - h,
                bar * 0.9,
                h,
                COLORS[m],
                metrics[m],
                values[m]
            );
        }
    }
    for (g, (method, _)) in rows.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">{method}</text>",
            MARGIN + group * (g as f64 + 0.5),
            H - MARGIN + 14.0
        );
    }
    for (m, name) in metrics.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{name} (bars scaled per metric)</text>",
            MARGIN + 8.0,
            MARGIN + 14.0 * m as f64,
            COLORS[m]
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders `input` (a loss log or an ablation CSV, told apart by header)
/// to `out`.
pub fn plot(input: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let svg = if text.starts_with("epoch,") {
        loss_svg(&text)?
    } else if text.starts_with("method,") {
        ablation_svg(&text)?
    } else {
        bail!("{} is neither a loss log nor an ablation report", input.display());
    };
    fs::write(out, svg).with_context(|| format!("writing {}", out.display()))
}
