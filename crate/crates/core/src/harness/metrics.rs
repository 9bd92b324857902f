use nalgebra::Vector2;
use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// GT UV faces below this unsigned area are left out of the distortion metrics.
pub const DEGENERATE_UV_AREA: f64 = 1e-14;

/// Per-vertex channel-mean squared error `(1/C) |y(v) - t(v)|^2`.
pub fn vertex_errors(y: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Vec<f64>> {
    if y.dim() != target.dim() {
        return Err(Error::ShapeMismatch { op: "vertex_errors", left: y.dim(), right: target.dim() });
    }
    let c = y.ncols().max(1) as f64;
    Ok(y.axis_iter(Axis(0))
        .zip(target.axis_iter(Axis(0)))
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / c)
        .collect())
}

/// Empirical CDF of normalized errors. `x` is sorted ascending and `fraction[i]`
/// is the share of samples `<= x[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    pub x: Vec<f64>,
    pub fraction: Vec<f64>,
}

impl Cdf {
    /// Right-continuous evaluation.
    pub fn at(&self, x: f64) -> f64 {
        let k = self.x.partition_point(|&v| v <= x);
        if k == 0 {
            0.0
        } else {
            self.fraction[k - 1]
        }
    }
}

/// One curve per subset of vertex indices, with errors divided by `normalizer`
/// (usually the largest error over all compared models).
pub fn vertex_error_cdf(errors: &[f64], subsets: &[Vec<usize>], normalizer: f64) -> Result<Vec<Cdf>> {
    if !(normalizer > 0.0) || !normalizer.is_finite() {
        return Err(Error::InvalidArgument(format!("CDF normalizer must be positive, got {normalizer}")));
    }
    subsets
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(Error::EmptySubset);
            }
            let mut x: Vec<f64> = s
                .iter()
                .map(|&v| {
                    errors
                        .get(v)
                        .map(|e| e / normalizer)
                        .ok_or_else(|| Error::InvalidArgument(format!("vertex {v} has no error value")))
                })
                .collect::<Result<_>>()?;
            x.sort_by(f64::total_cmp);
            let n = x.len() as f64;
            let fraction = (1..=x.len()).map(|i| i as f64 / n).collect();
            Ok(Cdf { x, fraction })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceDistortion {
    pub face: usize,
    pub area_d: f64,
    pub angle_d: f64,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UvDistortion {
    pub faces: Vec<FaceDistortion>,
    /// Faces skipped because their GT UV triangle is degenerate.
    pub excluded: usize,
    pub flipped_percent: f64,
}

fn uv_triangle(uv: ArrayView2<f64>, f: &[usize; 3]) -> [Vector2<f64>; 3] {
    f.map(|v| Vector2::new(uv[[v, 0]], uv[[v, 1]]))
}

fn signed_area(t: &[Vector2<f64>; 3]) -> f64 {
    let (a, b) = (t[1] - t[0], t[2] - t[0]);
    0.5 * (a.x * b.y - a.y * b.x)
}

fn interior_angles(t: &[Vector2<f64>; 3]) -> [f64; 3] {
    std::array::from_fn(|k| {
        let (p, q) = (t[(k + 1) % 3] - t[k], t[(k + 2) % 3] - t[k]);
        (p.dot(&q) / (p.norm() * q.norm())).clamp(-1.0, 1.0).acos()
    })
}

/// Per-face area and angle distortion of `uv_pred` against `uv_gt`, plus the
/// share of faces whose orientation flipped.
///
/// A predicted triangle with zero area (or non-finite angles) counts as
/// flipped with infinite distortion.
pub fn uv_distortion(mesh: &TriangleMesh, uv_pred: ArrayView2<f64>, uv_gt: ArrayView2<f64>) -> Result<UvDistortion> {
    let n = mesh.n_vertices();
    for (name, uv) in [("uv_pred", uv_pred), ("uv_gt", uv_gt)] {
        if uv.dim() != (n, 2) {
            return Err(Error::ShapeMismatch { op: "uv_distortion", left: (n, 2), right: uv.dim() });
        }
        if uv.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
        }
    }
    let mut faces = Vec::with_capacity(mesh.n_faces());
    let mut excluded = 0;
    for (fi, f) in mesh.faces.iter().enumerate() {
        let gt = uv_triangle(uv_gt, f);
        let a_gt = signed_area(&gt);
        if a_gt.abs() < DEGENERATE_UV_AREA {
            excluded += 1;
            continue;
        }
        let pred = uv_triangle(uv_pred, f);
        let a_pred = signed_area(&pred);
        let ang_gt = interior_angles(&gt);
        let ang_pred = interior_angles(&pred);
        if a_pred == 0.0 || ang_pred.iter().any(|&a| !(a > 0.0)) {
            faces.push(FaceDistortion { face: fi, area_d: f64::INFINITY, angle_d: f64::INFINITY, flipped: true });
            continue;
        }
        let ratio: f64 = ang_gt.iter().zip(&ang_pred).map(|(g, p)| g / p).sum::<f64>() / 3.0;
        faces.push(FaceDistortion {
            face: fi,
            area_d: (1.0 - a_gt.abs() / a_pred.abs()).abs(),
            angle_d: (1.0 - ratio).abs(),
            flipped: a_pred.signum() != a_gt.signum(),
        });
    }
    let flipped = faces.iter().filter(|f| f.flipped).count();
    let flipped_percent = if faces.is_empty() { 0.0 } else { 100.0 * flipped as f64 / faces.len() as f64 };
    Ok(UvDistortion { faces, excluded, flipped_percent })
}

/// Control points of a perceptually ordered dark-blue to yellow ramp.
const RAMP: [[f64; 3]; 9] = [
    [0.267, 0.005, 0.329],
    [0.283, 0.141, 0.458],
    [0.254, 0.265, 0.530],
    [0.207, 0.372, 0.553],
    [0.164, 0.471, 0.558],
    [0.128, 0.567, 0.551],
    [0.135, 0.659, 0.518],
    [0.478, 0.821, 0.318],
    [0.993, 0.906, 0.144],
];

/// Maps `value / clip` (clamped to `[0, 1]`) onto the ramp as 8-bit RGB.
pub fn colormap(value: f64, clip: f64) -> [u8; 3] {
    let s = if clip > 0.0 && value.is_finite() { (value / clip).clamp(0.0, 1.0) } else { 1.0 };
    let pos = s * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let w = pos - i as f64;
    std::array::from_fn(|k| {
        let c = RAMP[i][k] * (1.0 - w) + RAMP[i + 1][k] * w;
        (c * 255.0).round().clamp(0.0, 255.0) as u8
    })
}

/// Linear RGB in `[0, 1]` to 8-bit.
pub fn rgb_to_u8(rgb: &[f64]) -> [u8; 3] {
    std::array::from_fn(|k| (rgb.get(k).copied().unwrap_or(0.0).clamp(0.0, 1.0) * 255.0).round() as u8)
}
