//! Minimal deterministic SVG line charts for the evaluation records.
//!
//! One polyline per (method, combo, metric) series, noise level on the x
//! axis. Output is plain hand-assembled XML so identical inputs yield
//! byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::EvalRecord;

/// Chart labels and optional fixed y range.
#[derive(Debug, Clone, Default)]
pub struct AxesSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 220.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect()
}

/// Renders a line chart of the records to `path`.
pub fn render_svg(records: &[EvalRecord], axes: &AxesSpec, path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }

    // Series keyed by (method, combo, metric); metric shown in the legend
    // only when several metrics are present.
    let mut keys: Vec<(String, String, String)> = records
        .iter()
        .map(|r| {
            (
                r.method.name().to_string(),
                r.combo.clone(),
                r.metric.name().to_string(),
            )
        })
        .collect();
    keys.sort();
    keys.dedup();
    let multi_metric = {
        let mut metrics: Vec<&str> = records.iter().map(|r| r.metric.name()).collect();
        metrics.sort();
        metrics.dedup();
        metrics.len() > 1
    };

    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for r in records {
        x_lo = x_lo.min(r.lambda);
        x_hi = x_hi.max(r.lambda);
        y_lo = y_lo.min(r.value);
        y_hi = y_hi.max(r.value);
    }
    if x_lo == x_hi {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if let Some(m) = axes.y_min {
        y_lo = m;
    }
    if let Some(m) = axes.y_max {
        y_hi = m;
    }
    if y_lo == y_hi {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = if axes.y_min.is_some() || axes.y_max.is_some() {
        (y_lo, y_hi)
    } else {
        (y_lo - pad, y_hi + pad)
    };

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_T + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(
        svg,
        r#"  <rect x="0" y="0" width="{}" height="{}" fill="white"/>"#,
        WIDTH, HEIGHT
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{:.2}" y="26" font-family="sans-serif" font-size="18" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        esc(&axes.title)
    );

    // Axes frame.
    let _ = writeln!(
        svg,
        r#"  <rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="1"/>"#,
        MARGIN_L, MARGIN_T, plot_w, plot_h
    );

    // Ticks and grid.
    for tx in ticks(x_lo, x_hi, 4) {
        let x = sx(tx);
        let _ = writeln!(
            svg,
            r##"  <line x1="{x:.2}" y1="{y1:.2}" x2="{x:.2}" y2="{y2:.2}" stroke="#dddddd" stroke-width="1"/>"##,
            x = x,
            y1 = MARGIN_T,
            y2 = MARGIN_T + plot_h
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{:.2}</text>"#,
            x,
            MARGIN_T + plot_h + 18.0,
            tx
        );
    }
    for ty in ticks(y_lo, y_hi, 5) {
        let y = sy(ty);
        let _ = writeln!(
            svg,
            r##"  <line x1="{x1:.2}" y1="{y:.2}" x2="{x2:.2}" y2="{y:.2}" stroke="#dddddd" stroke-width="1"/>"##,
            x1 = MARGIN_L,
            x2 = MARGIN_L + plot_w,
            y = y
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">{:.2}</text>"#,
            MARGIN_L - 6.0,
            y + 4.0,
            ty
        );
    }

    // Axis labels.
    let _ = writeln!(
        svg,
        r#"  <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0,
        esc(&axes.x_label)
    );
    let _ = writeln!(
        svg,
        r#"  <text x="18" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        esc(&axes.y_label)
    );

    // Series.
    for (si, key) in keys.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let dash = if key.2 == "snr_input_db" {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let mut points: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| {
                r.method.name() == key.0 && r.combo == key.1 && r.metric.name() == key.2
            })
            .map(|r| (r.lambda, r.value))
            .collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let path_points: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"  <polyline points="{}" fill="none" stroke="{}" stroke-width="2"{}/>"#,
            path_points.join(" "),
            color,
            dash
        );
        for &(x, y) in &points {
            let _ = writeln!(
                svg,
                r#"  <circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                sx(x),
                sy(y),
                color
            );
        }
        // Legend.
        let ly = MARGIN_T + 14.0 + si as f64 * 20.0;
        let label = if multi_metric {
            format!("{} {} {}", key.0, key.1, key.2)
        } else {
            format!("{} {}", key.0, key.1)
        };
        let _ = writeln!(
            svg,
            r#"  <line x1="{x1:.2}" y1="{y:.2}" x2="{x2:.2}" y2="{y:.2}" stroke="{c}" stroke-width="2"{dash}/>"#,
            x1 = WIDTH - MARGIN_R + 16.0,
            x2 = WIDTH - MARGIN_R + 44.0,
            y = ly,
            c = color,
            dash = dash
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            WIDTH - MARGIN_R + 50.0,
            ly + 4.0,
            esc(&label)
        );
    }
    let _ = writeln!(svg, "</svg>");

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{Method, Metric};

    fn sample_records() -> Vec<EvalRecord> {
        let mut out = Vec::new();
        for (mi, method) in [Method::Sdcn, Method::CnnOnly].iter().enumerate() {
            for l in 1..=5 {
                out.push(EvalRecord {
                    method: *method,
                    combo: "HH-VV".into(),
                    lambda: l as f64,
                    metric: Metric::Accuracy,
                    value: 1.0 - 0.1 * l as f64 - 0.05 * mi as f64,
                    n: 100,
                });
            }
        }
        out
    }

    /// Tiny well-formedness check: tags balance and attributes are quoted.
    fn assert_well_formed_xml(text: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = text;
        while let Some(start) = rest.find('<') {
            let end = rest[start..].find('>').expect("unclosed tag") + start;
            let tag = &rest[start + 1..end];
            rest = &rest[end + 1..];
            if tag.starts_with('?') || tag.starts_with('!') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().unwrap_or_else(|| panic!("stray closer {}", name));
                assert_eq!(open, name, "mismatched tags");
            } else if tag.ends_with('/') {
                // self-closing
            } else {
                let name = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {:?}", stack);
    }

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        let axes = AxesSpec {
            title: "accuracy vs noise <level>".into(),
            x_label: "lambda".into(),
            y_label: "accuracy".into(),
            y_min: Some(0.0),
            y_max: Some(1.0),
        };
        render_svg(&sample_records(), &axes, &a).unwrap();
        render_svg(&sample_records(), &axes, &b).unwrap();
        let ta = std::fs::read_to_string(&a).unwrap();
        assert_eq!(ta, std::fs::read_to_string(&b).unwrap());
        assert_well_formed_xml(&ta);
        // The angle bracket in the title must be escaped.
        assert!(ta.contains("&lt;level&gt;"));
        assert!(ta.contains("polyline"));
    }

    #[test]
    fn svg_rejects_empty_records() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_svg(&[], &AxesSpec::default(), &dir.path().join("x.svg")).is_err());
    }
}
