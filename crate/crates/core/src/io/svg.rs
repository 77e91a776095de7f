//! Hand-written SVG small multiples: one panel per predictor, selection
//! probability against cutpoint.

use std::fmt::Write;

use super::report::ProbabilityRow;
use crate::basis::CutpointGrid;

const PANEL_W: f64 = 220.0;
const PANEL_H: f64 = 150.0;
const MARGIN: f64 = 28.0;
const COLUMNS: usize = 4;
const HEADER: f64 = 34.0;

/// Data for one panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: String,
    /// `(cutpoint, probability)` in cutpoint order.
    pub points: Vec<(f64, f64)>,
    /// True cutoffs to mark with a vertical line.
    pub marks: Vec<f64>,
}

impl Panel {
    /// One panel per grid predictor, in grid order. `marks` pairs a predictor
    /// index with a cutoff value.
    pub fn from_rows(grid: &CutpointGrid, rows: &[ProbabilityRow], marks: &[(usize, f64)]) -> Vec<Panel> {
        grid.predictors()
            .iter()
            .enumerate()
            .map(|(j, g)| Panel {
                name: g.name.clone(),
                points: rows
                    .iter()
                    .filter(|r| r.predictor == g.name)
                    .map(|r| (r.cutpoint, r.probability))
                    .collect(),
                marks: marks.iter().filter(|m| m.0 == j).map(|m| m.1).collect(),
            })
            .collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

fn tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Renders the panels into a standalone SVG document with a dashed line at
/// `threshold` in every panel.
pub fn selection_svg(title: &str, panels: &[Panel], threshold: f64) -> String {
    let rows = panels.len().div_ceil(COLUMNS).max(1);
    let width = COLUMNS as f64 * PANEL_W;
    let height = HEADER + rows as f64 * PANEL_H;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#,
        w = num(width),
        h = num(height)
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#,
        num(width / 2.0),
        escape(title)
    );

    for (idx, panel) in panels.iter().enumerate() {
        let ox = (idx % COLUMNS) as f64 * PANEL_W;
        let oy = HEADER + (idx / COLUMNS) as f64 * PANEL_H;
        let (x0, x1) = (ox + MARGIN, ox + PANEL_W - 10.0);
        let (y0, y1) = (oy + 20.0, oy + PANEL_H - MARGIN);
        let lo = panel.points.iter().map(|p| p.0).chain(panel.marks.iter().copied()).fold(f64::INFINITY, f64::min);
        let hi = panel.points.iter().map(|p| p.0).chain(panel.marks.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
        let sx = |v: f64| {
            if hi > lo {
                x0 + (v - lo) / (hi - lo) * (x1 - x0)
            } else {
                (x0 + x1) / 2.0
            }
        };
        let sy = |p: f64| y1 - p.clamp(0.0, 1.0) * (y1 - y0);

        let _ = writeln!(s, r#"<g class="panel" data-predictor="{}">"#, escape(&panel.name));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            num((x0 + x1) / 2.0),
            num(oy + 14.0),
            escape(&panel.name)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            num(x0),
            num(y0),
            num(x1 - x0),
            num(y1 - y0)
        );
        for (p, label) in [(0.0, "0"), (1.0, "1")] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="9" text-anchor="end">{label}</text>"#,
                num(x0 - 3.0),
                num(sy(p) + 3.0)
            );
        }
        if !panel.points.is_empty() && hi.is_finite() {
            for (v, anchor, x) in [(lo, "start", x0), (hi, "end", x1)] {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-size="9" text-anchor="{anchor}">{}</text>"#,
                    num(x),
                    num(y1 + 12.0),
                    tick(v)
                );
            }
        }
        let _ = writeln!(
            s,
            r##"<line class="threshold" x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#c33" stroke-dasharray="4 3"/>"##,
            num(x0),
            num(x1),
            y = num(sy(threshold))
        );
        for &m in &panel.marks {
            let _ = writeln!(
                s,
                r##"<line class="truth" x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="#393" stroke-width="1.5"/>"##,
                num(y0),
                num(y1),
                x = num(sx(m))
            );
        }
        if !panel.points.is_empty() {
            let pts: Vec<String> = panel
                .points
                .iter()
                .map(|&(c, p)| format!("{},{}", num(sx(c)), num(sy(p))))
                .collect();
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#1f5fa8"/>"##,
                pts.join(" ")
            );
            for &(c, p) in &panel.points {
                let _ = writeln!(
                    s,
                    r##"<circle cx="{}" cy="{}" r="2" fill="#1f5fa8"/>"##,
                    num(sx(c)),
                    num(sy(p))
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}
