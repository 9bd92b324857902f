use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::metrics::{colormap, rgb_to_u8};
use super::train::MetricsReport;
use crate::error::{Error, Result};
use crate::mesh::{write_ply, PlyEncoding, TriangleMesh};

fn write(path: &Path, text: &str) -> Result<PathBuf> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn vertex_error_csv(errors: &[f64]) -> String {
    let mut s = String::from("vertex_id,error\n");
    for (v, e) in errors.iter().enumerate() {
        writeln!(s, "{v},{e:e}").expect("string write");
    }
    s
}

pub fn field_csv(values: &Array2<f64>) -> String {
    let mut s = String::from("vertex_id");
    for c in 0..values.ncols() {
        write!(s, ",c{c}").expect("string write");
    }
    s.push('\n');
    for (v, row) in values.rows().into_iter().enumerate() {
        write!(s, "{v}").expect("string write");
        for x in row {
            write!(s, ",{x:e}").expect("string write");
        }
        s.push('\n');
    }
    s
}

/// JSON summary of a report. Large per-vertex data goes to the CSV files.
pub fn summary_json(report: &MetricsReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))
}

/// Writes the metrics files of `report` into `dir` and returns their paths:
/// `metrics.json`, `vertex_errors.csv`, `losses.csv`, `cdf.csv` and, for UV
/// runs, `faces.csv`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![
        write(&dir.join("metrics.json"), &summary_json(report)?)?,
        write(&dir.join("vertex_errors.csv"), &vertex_error_csv(&report.vertex_errors))?,
    ];
    let mut losses = String::from("iteration,loss\n");
    for (i, l) in report.loss_history.iter().enumerate() {
        writeln!(losses, "{i},{l:e}").expect("string write");
    }
    out.push(write(&dir.join("losses.csv"), &losses)?);
    let mut cdf = String::from("group,x,fraction\n");
    for (g, c) in report.cdf.iter().enumerate() {
        for (x, f) in c.x.iter().zip(&c.fraction) {
            writeln!(cdf, "{g},{x:e},{f:e}").expect("string write");
        }
    }
    out.push(write(&dir.join("cdf.csv"), &cdf)?);
    if let Some(uv) = &report.uv {
        let mut s = String::from("face_id,area_d,angle_d,flipped\n");
        for f in &uv.faces {
            writeln!(s, "{},{:e},{:e},{}", f.face, f.area_d, f.angle_d, u8::from(f.flipped)).expect("string write");
        }
        out.push(write(&dir.join("faces.csv"), &s)?);
    }
    Ok(out)
}

/// Writes `mesh` as binary PLY with per-vertex colors.
pub fn write_colored_ply(mesh: &TriangleMesh, colors: &[[u8; 3]], path: &Path) -> Result<PathBuf> {
    let mut buf = Vec::new();
    write_ply(mesh, Some(colors), PlyEncoding::BinaryLittleEndian, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Per-vertex errors mapped through the colormap, saturating at `clip`.
pub fn error_colors(errors: &[f64], clip: f64) -> Vec<[u8; 3]> {
    errors.iter().map(|&e| colormap(e, clip)).collect()
}

/// RGB fields are shown as themselves; other fields map their first channel
/// through the colormap over its range.
pub fn field_colors(values: &Array2<f64>) -> Vec<[u8; 3]> {
    if values.ncols() == 3 && values.iter().all(|x| (-0.5..=1.5).contains(x)) {
        return values.rows().into_iter().map(|r| rgb_to_u8(r.as_slice().unwrap_or(&r.to_vec()))).collect();
    }
    let col = values.column(0);
    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    col.iter().map(|&x| colormap(x - lo, span)).collect()
}
