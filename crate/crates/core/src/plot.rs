//! Minimal self-contained SVG output: line plots and event timelines.

use std::fmt::Write as _;
use std::path::Path;

use crate::engine::BdsPath;
use crate::error::{BdsError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

/// Renders a line plot with markers as an SVG document.
pub fn render_plot(series: &[Series], opts: &PlotOptions) -> Result<String> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(BdsError::Empty("plot has no points".into()));
    }
    let tx = |x: f64| if opts.log_x { x.log10() } else { x };
    if opts.log_x && series.iter().flat_map(|s| &s.points).any(|p| p.0 <= 0.0) {
        return Err(BdsError::InvalidArgument("log-x plot needs positive abscissae".into()));
    }
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| tx(p.0))));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| MARGIN + (tx(x) - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&opts.title));
    let _ = writeln!(
        svg,
        r#"<path d="M{MARGIN} {MARGIN} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let label = if opts.log_x { format!("{:.3}", 10f64.powf(xv)) } else { format!("{xv:.3}") };
        let px = MARGIN + f * (WIDTH - 2.0 * MARGIN);
        let _ = writeln!(svg, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, HEIGHT - MARGIN + 16.0);
        let yv = y0 + f * (y1 - y0);
        let py = HEIGHT - MARGIN - f * (HEIGHT - 2.0 * MARGIN);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{py:.1}" text-anchor="end">{yv:.3}</text>"#, MARGIN - 6.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(&opts.x_label));
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">{}</text>"#,
        escape(&opts.y_label),
        y = HEIGHT / 2.0
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts = s.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        for &(x, y) in &pts {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(series: &[Series], opts: &PlotOptions, path: &Path) -> Result<()> {
    std::fs::write(path, render_plot(series, opts)?)?;
    Ok(())
}

/// Two-row timeline: swap events on top, demographic events below.
pub fn render_timeline(path: &BdsPath, title: &str) -> Result<String> {
    if !(path.horizon > 0.0) {
        return Err(BdsError::Empty("timeline needs a positive horizon".into()));
    }
    let sx = |t: f64| MARGIN + t / path.horizon * (WIDTH - 2.0 * MARGIN);
    let height = 160.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    for (row, label, y) in [(0, "swaps", 50.0), (1, "births/deaths", 100.0)] {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, MARGIN - 6.0, y + 4.0);
        let _ = writeln!(svg, r##"<line x1="{MARGIN}" y1="{y}" x2="{}" y2="{y}" stroke="#999"/>"##, WIDTH - MARGIN);
        let color = COLORS[row];
        for e in path.events.iter().filter(|e| e.event.is_swap() == (row == 0)) {
            let x = sx(e.time);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{:.1}" stroke="{color}"/>"#,
                y - 12.0,
                y + 12.0
            );
        }
    }
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="140">0</text>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="140" text-anchor="end">{}</text>"#, WIDTH - MARGIN, path.horizon);
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_timeline(path: &BdsPath, title: &str, out: &Path) -> Result<()> {
    std::fs::write(out, render_timeline(path, title)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Population;

    #[test]
    fn constant_series_is_a_horizontal_line() {
        let s = Series::new("c", vec![(0.0, 2.0), (1.0, 2.0), (2.0, 2.0)]);
        let svg = render_plot(&[s], &PlotOptions::default()).unwrap();
        assert!(svg.starts_with("<svg"));
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let ys: Vec<&str> = line.split('"').nth(1).unwrap().split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn log_x_rejects_nonpositive() {
        let s = Series::new("tv", vec![(0.0, 0.1)]);
        let opts = PlotOptions { log_x: true, ..Default::default() };
        assert!(render_plot(&[s], &opts).is_err());
        assert!(render_plot(&[], &PlotOptions::default()).is_err());
    }

    #[test]
    fn empty_timeline_renders() {
        let svg = render_timeline(&BdsPath::empty(Population(vec![1, 1]), 2.0), "t").unwrap();
        assert!(svg.contains("swaps"));
    }
}
