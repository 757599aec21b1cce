//! Static SVG line plots and heatmaps built from primitives. Output bytes
//! depend only on the input rows and style.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{LabError, Result};
use crate::schema::{read_rows, detect_schema, CriticalTimeRow, GenerativeRow, MatrixRow, Schema, TrajectoryRow};

pub const WIDTH: f64 = 960.0;
pub const HEIGHT: f64 = 600.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 210.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotStyle {
    pub log_x: bool,
    pub log_y: bool,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if (1e-2..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn header(out: &mut String, title: Option<&str>) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    if let Some(t) = title {
        let _ = writeln!(out, r#"<text x="{:.2}" y="28" font-family="sans-serif" font-size="18" text-anchor="middle">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, escape(t));
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let t = if log { v.log10() } else { v };
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            let pad = if log { 0.5 } else { 0.1 * lo.abs().max(1.0) };
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    fn tick_value(&self, frac: f64) -> f64 {
        let t = self.lo + frac * (self.hi - self.lo);
        if self.log {
            10f64.powf(t)
        } else {
            t
        }
    }
}

/// Line plot; series with a single point are drawn as markers only.
pub fn line_svg(series: &[Series], style: &PlotStyle, x_label: &str, y_label: &str) -> Result<String> {
    let keep = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!style.log_x || x > 0.0) && (!style.log_y || y > 0.0);
    let series: Vec<Series> = series.iter().map(|s| Series { points: s.points.iter().copied().filter(keep).collect(), ..s.clone() }).filter(|s| !s.points.is_empty()).collect();
    if series.is_empty() {
        return Err(LabError::format("<plot>", "no plottable points"));
    }
    let xa = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), style.log_x);
    let ya = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), style.log_y);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + xa.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.frac(y)) * ph;

    let mut out = String::new();
    header(&mut out, style.title.as_deref());
    let _ = writeln!(out, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (x, y) = (LEFT + f * pw, TOP + (1.0 - f) * ph);
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, TOP + ph + 20.0, fmt_tick(xa.tick_value(f)));
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, fmt_tick(ya.tick_value(f)));
    }
    let x_name = if style.log_x { format!("{x_label} (log)") } else { x_label.to_string() };
    let y_name = if style.log_y { format!("{y_label} (log)") } else { y_label.to_string() };
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 15.0, escape(&x_name));
    let _ = writeln!(out, r#"<text x="20" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#, TOP + ph / 2.0, TOP + ph / 2.0, escape(&y_name));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, px(x), py(y));
        } else {
            let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#, pts.join(" "));
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 20.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Grey-scale heatmap: white at zero, black at the largest `|value|`.
pub fn heatmap_svg(cells: &[MatrixRow], style: &PlotStyle) -> Result<String> {
    if cells.is_empty() {
        return Err(LabError::format("<plot>", "empty matrix"));
    }
    let rows = cells.iter().map(|c| c.row).max().unwrap_or(0) + 1;
    let cols = cells.iter().map(|c| c.col).max().unwrap_or(0) + 1;
    let peak = cells.iter().map(|c| c.value.abs()).fold(0.0, f64::max);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let size = (pw / cols as f64).min(ph / rows as f64);
    let mut out = String::new();
    header(&mut out, style.title.as_deref());
    for c in cells {
        let shade = heat_shade(c.value, peak);
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{size:.2}" height="{size:.2}" fill="rgb({shade},{shade},{shade})"/>"#,
            LEFT + c.col as f64 * size,
            TOP + c.row as f64 * size
        );
    }
    let _ = writeln!(out, r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="1"/>"#, cols as f64 * size, rows as f64 * size);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">max |value| = {}</text>"#, WIDTH - RIGHT + 15.0, TOP + 10.0, fmt_tick(peak));
    out.push_str("</svg>\n");
    Ok(out)
}

/// Grey level of one heatmap cell.
pub fn heat_shade(value: f64, peak: f64) -> u8 {
    let frac = if peak > 0.0 { (value.abs() / peak).clamp(0.0, 1.0) } else { 0.0 };
    (255.0 * (1.0 - frac)).round() as u8
}

/// Renders any schema-conforming CSV.
pub fn render_csv(csv: &Path, style: &PlotStyle) -> Result<String> {
    match detect_schema(csv)? {
        Schema::Trajectory => {
            let rows: Vec<TrajectoryRow> = read_rows(csv, Schema::Trajectory)?;
            let mut by: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for r in rows {
                by.entry(r.feature_index).or_default().push((r.time, r.w_bar));
            }
            let series: Vec<Series> = by.into_iter().map(|(i, points)| Series { label: format!("feature {i}"), points, dashed: false }).collect();
            line_svg(&series, style, "time", "w_bar")
        }
        Schema::CriticalTime => critical_time_svg(&read_rows(csv, Schema::CriticalTime)?, style),
        Schema::Generative => generative_svg(&read_rows(csv, Schema::Generative)?, style),
        Schema::Matrix => heatmap_svg(&read_rows(csv, Schema::Matrix)?, style),
    }
}

type MeasuredAndFormula = (Vec<(f64, f64)>, Vec<(f64, f64)>);

/// Measured (solid) and formula (dashed) critical times against `ε`.
pub fn critical_time_svg(rows: &[CriticalTimeRow], style: &PlotStyle) -> Result<String> {
    let mut by: BTreeMap<String, MeasuredAndFormula> = BTreeMap::new();
    for r in rows {
        let key = format!("{} L={} λ={} ρ={}", r.objective, r.depth, r.lambda, r.rho);
        let e = by.entry(key).or_default();
        e.0.push((r.epsilon, r.t_star_measured));
        e.1.push((r.epsilon, r.t_star_formula));
    }
    let mut series = vec![];
    for (label, (measured, formula)) in by {
        series.push(Series { label: format!("{label} measured"), points: measured, dashed: false });
        series.push(Series { label: format!("{label} formula"), points: formula, dashed: true });
    }
    line_svg(&series, style, "epsilon", "t*")
}

/// Seed-mean diagonalizability error against `T` or `n`; runs without that
/// diagnostic plot `lambda_hat` instead.
pub fn generative_svg(rows: &[GenerativeRow], style: &PlotStyle) -> Result<String> {
    let mut by: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for r in rows {
        if seen.insert((r.run_seed, r.t_or_n)) {
            let e = by.entry(r.t_or_n).or_default();
            e.0 += r.diag_error;
            e.1 += 1;
        }
    }
    let points: Vec<(f64, f64)> = by.into_iter().map(|(t, (s, n))| (t as f64, s / n as f64)).collect();
    if points.iter().any(|p| p.1.is_finite()) {
        return line_svg(&[Series { label: "mean diag error".into(), points, dashed: false }], style, "T or n", "diagonalizability error");
    }
    let points = rows.iter().map(|r| (r.feature as f64, r.lambda_hat)).collect();
    let style = PlotStyle { log_x: false, ..style.clone() };
    line_svg(&[Series { label: "lambda_hat".into(), points, dashed: false }], &style, "factor", "lambda_hat")
}

/// Writes the plot next to the CSV (same stem, `.svg`) unless `out` is given.
pub fn emit_plot(csv: &Path, style: &PlotStyle, out: Option<&Path>) -> Result<PathBuf> {
    let svg = render_csv(csv, style)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| csv.with_extension("svg"));
    std::fs::write(&path, svg).map_err(|e| LabError::io(&path, e))?;
    Ok(path)
}
