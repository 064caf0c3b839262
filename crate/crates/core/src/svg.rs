//! SVG renderings of tiling systems and norm reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::functions::NormReport;
use crate::tilings::{Color, TilingSystem};

const PANEL: f64 = 320.0;
const GAP: f64 = 24.0;

fn fill(c: Color) -> &'static str {
    match c {
        Color::Blue => "#4a78c2",
        Color::Yellow => "#e8c547",
    }
}

/// One `<g>` layer per stage, side by side. In 1-D a stage is a strip; in
/// 2-D each cube is a square. Selected cubes get a dark outline.
pub fn system_svg(sys: &TilingSystem) -> Result<String> {
    let n = sys.window.dim();
    if n > 2 {
        return Err(Error::InvalidArgument("SVG rendering supports n <= 2".into()));
    }
    let m = sys.window.period() as f64;
    let scale = PANEL / m;
    let height = if n == 1 { 48.0 } else { PANEL };
    let stages = sys.stage_count().max(1) as f64;
    let width = stages * PANEL + (stages + 1.0) * GAP;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="12">"#,
        height + 2.0 * GAP
    );
    for (s, t) in sys.stages.iter().enumerate() {
        let x0 = GAP + s as f64 * (PANEL + GAP);
        let y0 = GAP;
        let _ = writeln!(out, r#"<g id="stage-{s}">"#);
        let _ = writeln!(out, r#"<text x="{x0}" y="{}">stage {s} (l = {})</text>"#, y0 - 6.0, sys.stage_levels[s]);
        let selected = &sys.selected[s];
        for (i, (q, c)) in t.iter().enumerate() {
            let side = q.side() * scale;
            let corner = q.corner();
            let (x, y, w, h) = if n == 1 {
                (x0 + corner[0] * scale, y0, side, height)
            } else {
                (x0 + corner[0] * scale, y0 + PANEL - corner[1] * scale - side, side, side)
            };
            let stroke = if selected.binary_search(&i).is_ok() { "#222" } else { "#999" };
            let _ = writeln!(
                out,
                r#"<rect x="{x:.3}" y="{y:.3}" width="{w:.3}" height="{h:.3}" fill="{}" stroke="{stroke}" stroke-width="0.5"/>"#,
                fill(c)
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Horizontal bars, one per term, scaled to the largest term.
pub fn norm_bars_svg(report: &NormReport, max_terms: usize) -> String {
    let terms: Vec<_> = report.terms.iter().take(max_terms).collect();
    let top = terms.iter().map(|t| t.value.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let row = 16.0;
    let label_w = 200.0;
    let bar_w = 360.0;
    let height = GAP * 2.0 + row * terms.len() as f64;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="monospace" font-size="11">"#,
        label_w + bar_w + 2.0 * GAP + 90.0
    );
    out.push('\n');
    let _ = writeln!(out, r#"<text x="{GAP}" y="{}">total {:.6e}</text>"#, GAP - 6.0, report.value);
    for (i, t) in terms.iter().enumerate() {
        let y = GAP + i as f64 * row;
        let w = bar_w * t.value.abs() / top;
        let _ = writeln!(out, r#"<text x="{GAP}" y="{:.1}">{}</text>"#, y + 11.0, escape(&t.label));
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{y:.1}" width="{w:.3}" height="{:.1}" fill="#4a78c2"/>"##,
            GAP + label_w,
            row - 3.0
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{:.3e}</text>"#, GAP + label_w + w + 4.0, y + 11.0, t.value);
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
