//! Deterministic SVG line charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::aggregate::AggregateCurve;
use crate::envs::EnvId;
use crate::error::Result;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Display-time clip for gradient plots.
pub const GRAD_CLIP: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Shaded band `(lo, hi)` per point.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

impl Series {
    pub fn from_curve(c: &AggregateCurve) -> Self {
        Self {
            label: c.label.clone(),
            x: c.grid.iter().map(|&s| s as f64).collect(),
            y: c.iqm.clone(),
            band: Some((c.ipr_lo.clone(), c.ipr_hi.clone())),
        }
    }
}

/// Data range of all points and bands, widened by 5% on each side.
pub fn extents(series: &[Series]) -> Option<[f64; 4]> {
    let xs = series.iter().flat_map(|s| s.x.iter().copied());
    let ys = series.iter().flat_map(|s| {
        let band = s.band.iter().flat_map(|(l, h)| l.iter().chain(h.iter()).copied());
        s.y.iter().copied().chain(band)
    });
    let (x0, x1) = bounds(xs)?;
    let (y0, y1) = bounds(ys)?;
    let (mx, my) = (margin(x0, x1), margin(y0, y1));
    Some([x0 - mx, x1 + mx, y0 - my, y1 + my])
}

fn bounds(it: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    it.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((a, b)) => Some((a.min(v), b.max(v))),
    })
}

fn margin(a: f64, b: f64) -> f64 {
    if b > a {
        0.05 * (b - a)
    } else {
        0.05 * a.abs().max(1.0)
    }
}

/// Line chart; returns `None` for empty input.
pub fn line_chart(title: &str, ylabel: &str, series: &[Series]) -> Option<String> {
    let [x0, x1, y0, y1] = extents(series)?;
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#, px(xv), H - PAD + 14.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#, PAD - 4.0, py(yv) + 3.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="14" y="{}" font-size="11" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#, H / 2.0, H / 2.0, esc(ylabel));
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if let Some((lo, hi)) = &ser.band {
            let mut pts: Vec<String> = ser.x.iter().zip(hi).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
            pts.extend(ser.x.iter().zip(lo).rev().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))));
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
        }
        let pts: Vec<String> = ser
            .x
            .iter()
            .zip(&ser.y)
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" fill="{color}">{}</text>"#,
            PAD + 6.0,
            PAD + 14.0 + 12.0 * i as f64,
            esc(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Applies the display clip `min(v, 1)`; stored statistics stay unclipped.
pub fn clip_for_display(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.min(GRAD_CLIP)).collect()
}

fn env_of(label: &str) -> &'static str {
    for id in [EnvId::CartpoleSwingup, EnvId::MiniBreakout, EnvId::Pendulum] {
        if label.starts_with(id.as_str()) {
            return id.as_str();
        }
    }
    "other"
}

/// One chart per environment plus a panel with every curve. Empty input
/// writes nothing and returns a warning.
pub fn emit_plots(curves: &[AggregateCurve], out: &Path) -> Result<(Vec<PathBuf>, Vec<String>)> {
    if curves.is_empty() {
        return Ok((Vec::new(), vec!["no aggregates to plot".into()]));
    }
    std::fs::create_dir_all(out)?;
    let mut envs: Vec<&str> = curves.iter().map(|c| env_of(&c.label)).collect();
    envs.dedup();
    envs.sort();
    envs.dedup();
    let mut written = Vec::new();
    for e in envs {
        let series: Vec<Series> = curves.iter().filter(|c| env_of(&c.label) == e).map(Series::from_curve).collect();
        if let Some(svg) = line_chart(e, "normalized IQM return", &series) {
            let p = out.join(format!("{e}.svg"));
            std::fs::write(&p, svg)?;
            written.push(p);
        }
    }
    let all: Vec<Series> = curves.iter().map(Series::from_curve).collect();
    if let Some(svg) = line_chart("all runs", "normalized IQM return", &all) {
        let p = out.join("aggregate.svg");
        std::fs::write(&p, svg)?;
        written.push(p);
    }
    Ok((written, Vec::new()))
}

/// Gradient-std chart with the display clip applied.
pub fn gradient_chart(title: &str, series: &[(String, Vec<f64>, Vec<f64>)]) -> Option<String> {
    let s: Vec<Series> = series
        .iter()
        .map(|(l, x, y)| Series { label: l.clone(), x: x.clone(), y: clip_for_display(y), band: None })
        .collect();
    line_chart(title, "gradient std (clipped at 1)", &s)
}
