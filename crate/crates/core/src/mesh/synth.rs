//! Synthetic target fields: x-coordinate partitions, gradient noise and the
//! hue-mapped patchwork used for the RGB experiments.

use ndarray::Array2;
use noise::{NoiseFn, Perlin};

use super::{ChannelSemantics, TriangleMesh, VertexField, VertexPartition};
use crate::error::{Error, Result};

/// Relative spread below which a patchwork counts as flat.
const FLAT_TOLERANCE: f64 = 1e-9;

/// Labels each vertex with the number of thresholds at or below its x
/// coordinate, so a vertex sitting exactly on a threshold joins the upper group.
pub fn partition_by_x(mesh: &TriangleMesh, thresholds: &[f64]) -> Result<VertexPartition> {
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must be strictly increasing: {thresholds:?}"
        )));
    }
    let labels = mesh
        .vertices
        .iter()
        .map(|p| thresholds.iter().filter(|&&t| t <= p[0]).count())
        .collect();
    VertexPartition::new(labels, thresholds.len() + 1)
}

/// Classic 3D gradient noise sampled at `frequency * position`.
pub fn perlin_scalar(mesh: &TriangleMesh, frequency: f64, seed: u64) -> Result<VertexField> {
    if !(frequency > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise frequency must be positive, got {frequency}"
        )));
    }
    // Fold the 64-bit seed so distinct high bits still change the table.
    let perlin = Perlin::new((seed ^ (seed >> 32)) as u32);
    let values = mesh
        .vertices
        .iter()
        .map(|p| {
            perlin
                .get([p[0] * frequency, p[1] * frequency, p[2] * frequency])
                .clamp(-1.0, 1.0)
        })
        .collect();
    VertexField::scalar(values)
}

/// HSV to RGB with all components in `[0, 1]`; hue wraps at 1.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Builds `q(v) = group_fields[label(v)](v)`, rescales it to `[0, 1]` and maps
/// it to RGB through the hue channel.
///
/// A patchwork made only of exactly constant group fields with one common
/// value has no defined normalization and yields [`Error::ConstantField`]. A
/// patchwork that is flat only up to rounding (for example the constant
/// eigenvector) normalizes to hue 0 everywhere.
pub fn synth_patchwork_rgb(
    mesh: &TriangleMesh,
    partition: &VertexPartition,
    group_fields: &[VertexField],
) -> Result<VertexField> {
    let n = mesh.n_vertices();
    if partition.labels.len() != n {
        return Err(Error::InvalidArgument("partition does not match mesh".into()));
    }
    if group_fields.len() != partition.group_count {
        return Err(Error::InvalidArgument(format!(
            "{} group fields for {} groups",
            group_fields.len(),
            partition.group_count
        )));
    }
    for g in group_fields {
        if g.semantics != ChannelSemantics::Scalar || g.n_vertices() != n {
            return Err(Error::InvalidArgument(
                "group fields must be scalar fields over the mesh".into(),
            ));
        }
    }
    let q: Vec<f64> = (0..n)
        .map(|v| group_fields[partition.labels[v]].values[[v, 0]])
        .collect();
    let (lo, hi) = q
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let spread = hi - lo;
    let normalized: Vec<f64> = if spread == 0.0 {
        return Err(Error::ConstantField);
    } else if spread <= FLAT_TOLERANCE * lo.abs().max(hi.abs()).max(1.0) {
        vec![0.0; n]
    } else {
        q.iter().map(|x| ((x - lo) / spread).clamp(0.0, 1.0)).collect()
    };
    let mut rgb = Array2::zeros((n, 3));
    for (v, h) in normalized.into_iter().enumerate() {
        let c = hsv_to_rgb(h, 1.0, 1.0);
        for k in 0..3 {
            rgb[[v, k]] = c[k];
        }
    }
    VertexField::new(rgb, ChannelSemantics::Rgb)
}
