//! Standalone SVG plots: a utilization step plot and an overhead scatter.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::{ratio_to_f64, OverheadReport, UtilizationSeries};
use crate::model::{AggregationStrategy, MICROS_PER_SEC};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn plot_w() -> f64 {
    WIDTH - LEFT - RIGHT
}

fn plot_h() -> f64 {
    HEIGHT - TOP - BOTTOM
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        plot_w(),
        plot_h()
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Utilization in [0, 1] against seconds since the first task start.
pub fn utilization_svg(series: &[(String, &UtilizationSeries)]) -> String {
    let mut out = String::new();
    header(&mut out, "utilization");
    let end = series.iter().map(|(_, s)| s.end_us()).max().unwrap_or(0).max(1) as f64;
    let x = |t: u64| LEFT + t as f64 / end * plot_w();
    let y = |v: f64| TOP + (1.0 - v) * plot_h();

    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{LEFT}" y="{}">0</text><text x="{}" y="{}" text-anchor="end">{:.1} s</text>"#,
        HEIGHT - BOTTOM + 16.0,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM + 16.0,
        end / MICROS_PER_SEC as f64
    );

    for (i, (label, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let values = s.values();
        let mut points = String::new();
        for (k, (&t, &v)) in s.breakpoints_us.iter().zip(&values).enumerate() {
            if k > 0 {
                let _ = write!(points, "{:.2},{:.2} ", x(t), y(values[k - 1]));
            }
            let _ = write!(points, "{:.2},{:.2} ", x(t), y(v));
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.trim_end()
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            LEFT + 8.0,
            TOP + 14.0 + 14.0 * i as f64,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Normalized overhead (log scale) against task time as categories. Per-node
/// points are filled, the rest open; color follows the node count.
pub fn overhead_svg(reports: &[OverheadReport]) -> String {
    let mut out = String::new();
    header(&mut out, "normalized overhead");
    let times: Vec<u64> = reports
        .iter()
        .map(|r| r.task_time_us)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let nodes: Vec<u32> = reports.iter().map(|r| r.nodes).collect::<BTreeSet<_>>().into_iter().collect();

    let positive: Vec<f64> = reports
        .iter()
        .map(|r| ratio_to_f64(r.normalized_overhead))
        .filter(|&v| v > 0.0)
        .collect();
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min).min(0.1);
    let hi = positive.iter().copied().fold(0.0, f64::max).max(0.1);
    let (lo_exp, hi_exp) = (lo.log10().floor() as i32, hi.log10().ceil().max(lo.log10().floor() + 1.0) as i32);
    let y = |v: f64| {
        let frac = (v.max(10f64.powi(lo_exp)).log10() - lo_exp as f64) / (hi_exp - lo_exp) as f64;
        TOP + (1.0 - frac) * plot_h()
    };
    let band = plot_w() / times.len().max(1) as f64;
    let x = |t: u64| {
        let idx = times.iter().position(|&v| v == t).unwrap_or(0);
        LEFT + band * (idx as f64 + 0.5)
    };

    for e in lo_exp..=hi_exp {
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"##,
            WIDTH - RIGHT,
            LEFT - 6.0,
            y(10f64.powi(e)) + 4.0,
            y = y(10f64.powi(e)),
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="black" stroke-dasharray="4 3"/>"#,
        WIDTH - RIGHT,
        y = y(0.1)
    );
    for &t in &times {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">t={} s</text>"#,
            x(t),
            HEIGHT - BOTTOM + 16.0,
            t as f64 / MICROS_PER_SEC as f64
        );
    }

    for r in reports {
        let n = nodes.iter().position(|&v| v == r.nodes).unwrap_or(0);
        let color = PALETTE[n % PALETTE.len()];
        let fill = if r.strategy == AggregationStrategy::PerNode { color } else { "none" };
        let jitter = (n as f64 - (nodes.len() as f64 - 1.0) / 2.0) * (band / (nodes.len() as f64 + 2.0));
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" stroke="{color}" fill="{fill}"><title>{}</title></circle>"#,
            x(r.task_time_us) + jitter,
            y(ratio_to_f64(r.normalized_overhead)),
            escape(&r.label)
        );
    }
    for (i, n) in nodes.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{}">{n} nodes</text>"#,
            WIDTH - RIGHT - 70.0,
            TOP + 14.0 + 14.0 * i as f64,
            PALETTE[i % PALETTE.len()]
        );
    }
    out.push_str("</svg>\n");
    out
}
