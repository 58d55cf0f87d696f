//! Accuracy-versus-round line charts as standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::csv::RoundRecord;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f",
];

fn points(records: &[RoundRecord]) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|r| r.accuracy.map(|a| (r.round as f64, a)))
        .collect()
}

/// Renders one polyline per labelled series. Accuracy spans [0, 1] on the
/// y axis; the x axis spans rounds 0 through the largest round present.
pub fn render_svg(series: &[(&str, &[RoundRecord])]) -> Result<String> {
    let all: Vec<Vec<(f64, f64)>> = series.iter().map(|(_, r)| points(r)).collect();
    if all.iter().all(|p| p.is_empty()) {
        return Err(Error::usage("no record carries an accuracy value"));
    }
    let max_round = all.iter().flatten().map(|p| p.0).fold(1.0f64, f64::max);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + plot_w * x / max_round;
    let sy = |y: f64| HEIGHT - MARGIN - plot_h * y;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (sx(0.0), sy(0.0), sx(max_round), sy(1.0));
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.1}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
        x1,
        y0 + 18.0,
        max_round as u64
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">round</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">accuracy</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, ((label, _), pts)) in series.iter().zip(&all).enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{colour}">{label}</text>"#,
            x1 - 90.0,
            y1 + 14.0 * (i as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes a single-series accuracy chart.
pub fn emit_plot(records: &[RoundRecord], path: impl AsRef<Path>) -> Result<()> {
    emit_plot_series(&[("accuracy", records)], path)
}

pub fn emit_plot_series(series: &[(&str, &[RoundRecord])], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let svg = render_svg(series)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
