//! Standalone SVG line and scatter plots. Output depends only on the input,
//! and the plotted data is embedded in a comment.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 90.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const TICKS: usize = 5;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
    #[error("series {0:?} has no positive values for a log axis")]
    NoPositive(String),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Style {
    Line,
    Markers,
}

#[derive(Clone, Debug, Serialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points, style: Style::Line }
    }

    pub fn markers(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points, style: Style::Markers }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub log_y: bool,
}

impl Plot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Plot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series: Vec::new(), log_y: false }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn log_y(mut self, on: bool) -> Self {
        self.log_y = on;
        self
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Comment-safe text: no `--` inside an XML comment.
fn comment_safe(s: &str) -> String {
    let mut out = s.to_string();
    while out.contains("--") {
        out = out.replace("--", "- -");
    }
    out
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Option<Range> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return None;
        }
        if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
            let pad = 0.5 * lo.abs().max(1.0);
            return Some(Range { lo: lo - pad, hi: hi + pad });
        }
        let pad = 0.04 * (hi - lo);
        Some(Range { lo: lo - pad, hi: hi + pad })
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }
}

/// Renders the plot. Non-finite points are dropped, as are nonpositive `y`
/// on a log axis.
pub fn render_svg(plot: &Plot) -> Result<String, PlotError> {
    if plot.series.iter().all(|s| s.points.is_empty()) {
        return Err(PlotError::Empty);
    }
    let ty = |y: f64| if plot.log_y { y.log10() } else { y };
    let kept: Vec<Vec<(f64, f64)>> = plot
        .series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!plot.log_y || *y > 0.0))
                .map(|&(x, y)| (x, ty(y)))
                .collect()
        })
        .collect();
    if plot.log_y {
        if let Some((s, _)) = plot.series.iter().zip(&kept).find(|(s, k)| !s.points.is_empty() && k.is_empty()) {
            return Err(PlotError::NoPositive(s.label.clone()));
        }
    }
    let xr = Range::of(kept.iter().flatten().map(|p| p.0)).ok_or(PlotError::Empty)?;
    let yr = Range::of(kept.iter().flatten().map(|p| p.1)).ok_or(PlotError::Empty)?;
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let px = |x: f64| xr.map(x, x0, x1);
    let py = |y: f64| yr.map(y, y0, y1);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, "<!-- data");
    for s in &plot.series {
        let _ = writeln!(svg, "# {}", comment_safe(&s.label));
        let _ = writeln!(svg, "x,y");
        for (x, y) in &s.points {
            let _ = writeln!(svg, "{},{}", super::output::format_float(*x), super::output::format_float(*y));
        }
    }
    let _ = writeln!(svg, "-->");
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(&plot.title));
    let _ = writeln!(svg, r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);

    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let xv = xr.lo + f * (xr.hi - xr.lo);
        let yv = yr.lo + f * (yr.hi - yr.lo);
        let (sx, sy) = (px(xv), py(yv));
        let _ = writeln!(svg, r##"<line x1="{sx:.2}" y1="{y0:.2}" x2="{sx:.2}" y2="{:.2}" stroke="#888"/>"##, y0 + 5.0);
        let _ = writeln!(svg, r#"<text x="{sx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y0 + 19.0, tick_label(xv));
        let ylabel = if plot.log_y { format!("1e{yv:.1}") } else { tick_label(yv) };
        let _ = writeln!(svg, r##"<line x1="{:.2}" y1="{sy:.2}" x2="{x0:.2}" y2="{sy:.2}" stroke="#888"/>"##, x0 - 5.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, sy + 4.0, ylabel);
    }
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 18.0, escape(&plot.x_label));
    let y_title = if plot.log_y { format!("{} (log scale)", plot.y_label) } else { plot.y_label.clone() };
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&y_title)
    );

    for (i, (s, pts)) in plot.series.iter().zip(&kept).enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        match s.style {
            Style::Line => {
                let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                let _ = writeln!(svg, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.6" points="{}"/>"#, path.join(" "));
            }
            Style::Markers => {
                for &(x, y) in pts {
                    let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.6" fill="{colour}"/>"#, px(x), py(y));
                }
            }
        }
    }

    // legend, top right inside the frame
    let lx = x1 - 190.0;
    for (i, s) in plot.series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let ly = y1 + 16.0 + 18.0 * i as f64;
        match s.style {
            Style::Line => {
                let _ = writeln!(svg, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/>"#, lx + 22.0);
            }
            Style::Markers => {
                let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{ly:.1}" r="3" fill="{colour}"/>"#, lx + 11.0);
            }
        }
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 28.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(plot: &Plot, path: &Path) -> Result<(), PlotError> {
    let svg = render_svg(plot)?;
    std::fs::write(path, svg).map_err(|source| PlotError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Plot {
        Plot::new("decay", "n", "error")
            .with(Series::line("estimate", vec![(1.0, 0.5), (2.0, 0.25), (3.0, 0.125)]))
            .with(Series::markers("prediction", vec![(1.0, 0.4), (2.0, 0.2), (3.0, 0.1)]))
    }

    #[test]
    fn deterministic_with_legend_and_data() {
        let a = render_svg(&sample()).unwrap();
        assert_eq!(a, render_svg(&sample()).unwrap());
        assert!(a.contains(">estimate</text>") && a.contains(">prediction</text>"));
        assert!(a.contains("<!-- data") && a.contains("# prediction"));
        assert!(a.contains("<polyline") && a.contains("<circle"));
        let comment = &a[a.find("<!--").unwrap() + 4..a.find("-->").unwrap()];
        assert!(!comment.contains("--"));
    }

    #[test]
    fn empty_and_log_errors() {
        assert!(matches!(render_svg(&Plot::new("t", "x", "y")), Err(PlotError::Empty)));
        let empty = Plot::new("t", "x", "y").with(Series::line("none", vec![]));
        assert!(matches!(render_svg(&empty), Err(PlotError::Empty)));
        let neg = Plot::new("t", "x", "y").with(Series::line("neg", vec![(0.0, -1.0)])).log_y(true);
        assert!(matches!(render_svg(&neg), Err(PlotError::NoPositive(_))));
        assert!(render_svg(&sample().log_y(true)).unwrap().contains("(log scale)"));
    }

    #[test]
    fn unwritable_path() {
        let err = emit_plot(&sample(), Path::new("/nonexistent-dir/x.svg"));
        assert!(matches!(err, Err(PlotError::Io { .. })));
    }
}
