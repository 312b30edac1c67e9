//! CSV tables, sample files and SVG scatter plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::SampleBatch;

use super::sweep::ExperimentResult;

pub const CSV_HEADER: &str = "lambda,sampler,transfer_error,diversity,n_samples,seed_base";

/// Fixed-point decimal with `digits` significant digits.
pub fn format_significant(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return format!("{:.*}", digits.saturating_sub(1), 0.0);
    }
    // the exponent of the correctly rounded scientific form, so that 9.9999999996
    // counts as a two-digit integer part
    let sci = format!("{:.*e}", digits.saturating_sub(1), v);
    let exp: i64 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (digits as i64 - 1 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn csv_string(res: &ExperimentResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &res.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            format_significant(r.lambda, 9),
            r.sampler,
            format_significant(r.transfer_error, 9),
            format_significant(r.diversity, 9),
            r.n_samples,
            r.seed_base
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the sweep table: a header line and one row per grid point in the
/// result's row order.
pub fn emit_csv(res: &ExperimentResult, path: &Path) -> Result<()> {
    write_file(path, &csv_string(res))
}

/// Samples as CSV with columns `x0,x1,..`, values in shortest round-trip form.
pub fn samples_csv_string(batch: &SampleBatch) -> String {
    let mut out = (0..batch.dim()).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for s in batch.samples() {
        let row: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_samples_csv(batch: &SampleBatch, path: &Path) -> Result<()> {
    write_file(path, &samples_csv_string(batch))
}

pub fn read_samples_csv(path: &Path) -> Result<SampleBatch> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Format {
        kind: "samples csv",
        msg: format!("{}: {msg}", path.display()),
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let dim = header.split(',').count();
    let samples = lines
        .enumerate()
        .map(|(i, line)| {
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
            if row.len() != dim {
                return Err(bad(format!("row {} has {} columns, expected {dim}", i + 1, row.len())));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleBatch::new(samples).map_err(|e| bad(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgStyle {
    pub width: u32,
    pub height: u32,
    /// Glyph radius as a fraction of the larger view extent.
    pub radius: f64,
    pub opacity: f64,
    pub palette: Vec<String>,
    /// Legend entries, one per batch.
    pub labels: Vec<String>,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            width: 480,
            height: 480,
            radius: 0.004,
            opacity: 0.6,
            palette: [
                "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
            ]
            .map(String::from)
            .to_vec(),
            labels: Vec::new(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn svg_scatter_string(batches: &[SampleBatch], style: &SvgStyle) -> Result<String> {
    if batches.iter().any(|b| b.dim() != 2) {
        return Err(Error::InvalidArgument("scatter plots need 2-D samples".into()));
    }
    if style.palette.is_empty() {
        return Err(Error::InvalidArgument("palette must not be empty".into()));
    }
    let points = || batches.iter().flat_map(|b| b.samples());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points() {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    // a degenerate extent gets a unit window centered on the data
    if x1 <= x0 {
        (x0, x1) = (x0 - 0.5, x0 + 0.5);
    }
    if y1 <= y0 {
        (y0, y1) = (y0 - 0.5, y0 + 0.5);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    let (mx, my) = (0.05 * w, 0.05 * h);
    // SVG y grows downwards, so points are drawn at -y
    let (vx, vy, vw, vh) = (x0 - mx, -(y1 + my), w + 2.0 * mx, h + 2.0 * my);
    let r = style.radius * vw.max(vh);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="{vx:.6} {vy:.6} {vw:.6} {vh:.6}">"#,
        style.width, style.height
    );
    let _ = writeln!(
        out,
        r#"<rect x="{vx:.6}" y="{vy:.6}" width="{vw:.6}" height="{vh:.6}" fill="white"/>"#
    );
    for (i, b) in batches.iter().enumerate() {
        let color = &style.palette[i % style.palette.len()];
        let _ = writeln!(out, r#"<g fill="{color}" fill-opacity="{}">"#, style.opacity);
        for p in b.samples() {
            let _ = writeln!(out, r#"<circle cx="{:.6}" cy="{:.6}" r="{r:.6}"/>"#, p[0], -p[1]);
        }
        out.push_str("</g>\n");
    }
    let font = 0.035 * vw.max(vh);
    for (i, label) in style.labels.iter().take(batches.len()).enumerate() {
        let color = &style.palette[i % style.palette.len()];
        let _ = writeln!(
            out,
            r#"<text x="{:.6}" y="{:.6}" font-size="{font:.6}" fill="{color}">{}</text>"#,
            vx + 0.5 * font,
            vy + (i as f64 + 1.2) * font,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// One circle per sample, one color per batch, view box fitted to the data
/// with a 5% margin.
pub fn emit_svg_scatter(batches: &[SampleBatch], path: &Path, style: &SvgStyle) -> Result<()> {
    write_file(path, &svg_scatter_string(batches, style)?)
}
