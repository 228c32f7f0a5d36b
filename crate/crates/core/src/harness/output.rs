//! CSV and SVG renderings of experiment records.

use std::fmt::Write as _;
use std::path::Path;

use super::{Metric, ResultRecord};
use crate::error::{Error, Result};

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `experiment,<sweep keys…>,metric,value,stderr,trials`, one row per
/// record, LF line endings. Floats use the shortest round-trip form.
pub fn csv_string(records: &[ResultRecord]) -> String {
    let keys: Vec<&str> = records.first().map(|r| r.coordinates.iter().map(|(k, _)| k.as_str()).collect()).unwrap_or_default();
    let mut out = String::from("experiment");
    for k in &keys {
        out.push(',');
        out.push_str(&csv_field(k));
    }
    out.push_str(",metric,value,stderr,trials\n");
    for r in records {
        out.push_str(&csv_field(&r.experiment));
        for (_, v) in &r.coordinates {
            out.push(',');
            out.push_str(&csv_field(v));
        }
        let _ = writeln!(out, ",{},{},{},{}", r.metric.name(), r.value, r.stderr, r.trials);
    }
    out
}

pub fn emit_csv(records: &[ResultRecord], path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(records))?;
    Ok(())
}

/// What to plot: one metric against one sweep axis, one series per
/// combination of the remaining axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotAxes {
    pub metric: Metric,
    /// Sweep path on the x axis; the first axis when `None`.
    pub x: Option<String>,
    pub title: String,
}

impl PlotAxes {
    pub fn new(metric: Metric) -> Self {
        PlotAxes { metric, x: None, title: metric.name().to_string() }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn push_unique(list: &mut Vec<String>, v: &str) {
    if !list.iter().any(|x| x == v) {
        list.push(v.to_string());
    }
}

/// A line chart with one `<polyline>` per series.
pub fn svg_string(records: &[ResultRecord], axes: &PlotAxes) -> Result<String> {
    let rows: Vec<&ResultRecord> = records.iter().filter(|r| r.metric == axes.metric).collect();
    let first = rows.first().ok_or_else(|| Error::InvalidParameter(format!("no records for `{}`", axes.metric.name())))?;
    let x_key = match &axes.x {
        Some(k) => k.clone(),
        None => first.coordinates.first().map(|(k, _)| k.clone()).unwrap_or_default(),
    };
    let coord = |r: &ResultRecord, k: &str| r.coordinates.iter().find(|(rk, _)| rk == k).map(|(_, v)| v.clone());
    if !x_key.is_empty() && coord(first, &x_key).is_none() {
        return Err(Error::InvalidParameter(format!("`{x_key}` is not a sweep axis")));
    }
    let series_label = |r: &ResultRecord| {
        r.coordinates.iter().filter(|(k, _)| *k != x_key).map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
    };

    let mut xs = Vec::new();
    let mut series = Vec::new();
    for r in &rows {
        push_unique(&mut xs, &coord(r, &x_key).unwrap_or_default());
        push_unique(&mut series, &series_label(r));
    }
    let numeric: Option<Vec<f64>> = xs.iter().map(|x| x.parse::<f64>().ok()).collect();
    let x_pos: Vec<f64> = match &numeric {
        Some(v) if v.len() > 1 => v.clone(),
        _ => (0..xs.len()).map(|i| i as f64).collect(),
    };
    let (x_min, x_max) = x_pos.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let values: Vec<f64> = rows.iter().map(|r| r.value).filter(|v| v.is_finite()).collect();
    let (mut y_min, mut y_max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let sx = |x: f64| {
        if x_max > x_min {
            MARGIN + (x - x_min) / (x_max - x_min) * (WIDTH - 2.0 * MARGIN)
        } else {
            WIDTH / 2.0
        }
    };
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(&axes.title));
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#);
    for (label, &x) in xs.iter().zip(&x_pos) {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, sx(x), bottom + 18.0, escape(label));
    }
    for k in 0..=4 {
        let y = y_min + (y_max - y_min) * k as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="12">{:.4}</text>"#, left - 6.0, sy(y) + 4.0, y);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(&x_key));
    for (i, name) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = rows
            .iter()
            .filter(|r| series_label(r) == *name && r.value.is_finite())
            .filter_map(|r| {
                let xi = xs.iter().position(|x| Some(x) == coord(r, &x_key).as_ref())?;
                Some(format!("{:.2},{:.2}", sx(x_pos[xi]), sy(r.value)))
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(name)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            right - 150.0,
            top + 16.0 * (i as f64 + 1.0),
            escape(if name.is_empty() { axes.metric.name() } else { name })
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_svg(records: &[ResultRecord], axes: &PlotAxes, path: &Path) -> Result<()> {
    std::fs::write(path, svg_string(records, axes)?)?;
    Ok(())
}
