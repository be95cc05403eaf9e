//! Reports, CSV sinks and SVG plots.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentKind, RawConfig};
use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config: RawConfig,
    pub seed: u64,
    pub version: &'static str,
    pub threads: usize,
    pub wall_time_s: f64,
}

/// A log-log series for plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    /// Used as the SVG file stem.
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
    pub fitted_slope: Option<f64>,
    pub reference_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub kind: ExperimentKind,
    /// Deterministic given the configuration and seed.
    pub results: serde_json::Value,
    pub provenance: Provenance,
    pub outputs: Vec<PathBuf>,
    #[serde(skip)]
    pub series: Vec<Series>,
    /// Failed verifications; non-empty means the run falsified a checked property.
    pub falsifications: Vec<String>,
}

/// A CSV file that is flushed after every row, so interrupted runs leave a valid prefix.
pub struct CsvSink {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl CsvSink {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, HarnessError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut sink = Self {
            writer: csv::Writer::from_writer(file),
            path: path.to_path_buf(),
        };
        sink.row(header)?;
        Ok(sink)
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<(), HarnessError> {
        self.writer.write_record(fields.iter().map(AsRef::as_ref))?;
        self.writer
            .flush()
            .map_err(|e| HarnessError::io(&self.path, e))
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| HarnessError::runtime("json output", e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Shortest round-trip decimal, empty for `None`.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// One log-log plot: data points, the fitted line and the reference slope as a dashed guide.
pub fn render_series(series: &Series) -> Result<String, HarnessError> {
    let pts: Vec<(f64, f64)> = series
        .points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    if pts.len() < 2 {
        return Err(HarnessError::EmptySeries(series.name.clone()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let n = pts.len() as f64;
    let (cx, cy) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let line_at = |slope: f64, x: f64, (ax, ay): (f64, f64)| ay + slope * (x - ax);
    for slope in [series.fitted_slope, series.reference_slope]
        .into_iter()
        .flatten()
    {
        for x in [x0, x1] {
            let y = line_at(slope, x, (cx, cy));
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (label, v) in [("min", x0), ("max", x1)] {
        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text><!-- x {label} -->"#,
            sx(v),
            HEIGHT - MARGIN + 16.0,
            v
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            MARGIN - 6.0,
            sy(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">log10 {}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(&series.x_label)
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">log10 {}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(&series.y_label)
    );
    let poly: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    let _ = writeln!(
        w,
        r#"<polyline points="{}" fill="none" stroke="steelblue"/>"#,
        poly.join(" ")
    );
    for &(x, y) in &pts {
        let _ = writeln!(
            w,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            sx(x),
            sy(y)
        );
    }
    let mut notes = Vec::new();
    if let Some(s) = series.fitted_slope {
        let _ = writeln!(
            w,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick"/>"#,
            sx(x0),
            sy(line_at(s, x0, (cx, cy))),
            sx(x1),
            sy(line_at(s, x1, (cx, cy)))
        );
        notes.push(format!("fitted slope {s:.4}"));
    }
    if let Some(s) = series.reference_slope {
        let _ = writeln!(
            w,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
            sx(x0),
            sy(line_at(s, x0, (cx, cy))),
            sx(x1),
            sy(line_at(s, x1, (cx, cy)))
        );
        notes.push(format!("reference slope {s:.4}"));
    }
    let _ = writeln!(
        w,
        r#"<text x="{MARGIN}" y="{:.1}">{}</text>"#,
        MARGIN - 24.0,
        escape(&series.name)
    );
    let _ = writeln!(
        w,
        r#"<text x="{MARGIN}" y="{:.1}">{}</text>"#,
        MARGIN - 8.0,
        escape(&notes.join(", "))
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes one SVG per series of the report into `dir`.
pub fn render_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if report.series.is_empty() {
        return Err(HarnessError::EmptySeries(report.kind.name().to_string()));
    }
    let rendered = report
        .series
        .iter()
        .map(|s| Ok((s, render_series(s)?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut paths = Vec::new();
    for (s, svg) in rendered {
        let path = dir.join(format!("{}.svg", s.name));
        std::fs::write(&path, svg).map_err(|e| HarnessError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(points: Vec<(f64, f64)>) -> Series {
        Series {
            name: "s".into(),
            x_label: "T".into(),
            y_label: "gap".into(),
            points,
            fitted_slope: Some(-1.0),
            reference_slope: Some(-2.0),
        }
    }

    #[test]
    fn short_series_are_rejected() {
        assert!(matches!(
            render_series(&series(vec![(1.0, 1.0)])),
            Err(HarnessError::EmptySeries(_))
        ));
        assert!(matches!(
            render_series(&series(vec![(1.0, 1.0), (2.0, 0.0)])),
            Err(HarnessError::EmptySeries(_))
        ));
    }

    #[test]
    fn svg_carries_annotations() {
        let svg = render_series(&series(vec![(1.0, 1.0), (10.0, 0.1), (100.0, 0.01)])).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("fitted slope -1.0000"));
        assert!(svg.contains("stroke-dasharray"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
