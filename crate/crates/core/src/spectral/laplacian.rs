use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Magnitude cap applied to cotangents of nearly degenerate angles.
pub const COT_CLAMP: f64 = 1e6;

/// Cotangent stiffness matrix and lumped mass matrix of a triangle mesh.
///
/// `stiffness` is positive semidefinite with zero row sums; `mass` holds the
/// diagonal of the lumped mass matrix (one third of the incident face areas).
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub stiffness: CsMat<f64>,
    pub mass: Vec<f64>,
    /// Number of cotangents that hit [`COT_CLAMP`].
    pub clamped_cotangents: usize,
}

impl LaplacianPair {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// `L x` for a dense vector.
    pub fn apply_stiffness(&self, x: &[f64], out: &mut [f64]) {
        for (row, vec) in self.stiffness.outer_iterator().enumerate() {
            out[row] = vec.iter().map(|(col, &v)| v * x[col]).sum();
        }
    }

    /// Max absolute row sum of the stiffness matrix.
    pub fn stiffness_norm_inf(&self) -> f64 {
        self.stiffness
            .outer_iterator()
            .map(|r| r.iter().map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Assembles `L_ij = -(cot a_ij + cot b_ij) / 2` and `M_ii = (1/3) sum area`.
pub fn assemble_laplacian(mesh: &TriangleMesh) -> Result<LaplacianPair> {
    let n = mesh.n_vertices();
    let mut mass = vec![0.0; n];
    let mut tri = TriMat::with_capacity((n, n), 9 * mesh.n_faces());
    let mut diag = vec![0.0; n];
    let mut clamped = 0usize;
    for (fi, f) in mesh.faces.iter().enumerate() {
        let cross = mesh.face_cross(fi);
        let double_area = cross.norm();
        if !(double_area > 0.0) {
            return Err(Error::DegenerateFace {
                face: fi,
                area: 0.5 * double_area,
            });
        }
        for &v in f {
            mass[v] += double_area / 6.0;
        }
        for k in 0..3 {
            // Angle at corner k is opposite edge (i, j).
            let (c, i, j) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let pc = mesh.position(c);
            let (ei, ej) = (mesh.position(i) - pc, mesh.position(j) - pc);
            let mut cot = ei.dot(&ej) / ei.cross(&ej).norm();
            if cot.abs() > COT_CLAMP {
                cot = cot.signum() * COT_CLAMP;
                clamped += 1;
            }
            let w = 0.5 * cot;
            tri.add_triplet(i, j, -w);
            tri.add_triplet(j, i, -w);
            diag[i] += w;
            diag[j] += w;
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} cotangent weights at |cot| = {COT_CLAMP:e}");
    }
    for (i, &d) in diag.iter().enumerate() {
        tri.add_triplet(i, i, d);
    }
    // Duplicate triplets are summed on conversion.
    let mut stiffness: CsMat<f64> = tri.to_csr();
    // Recompute the diagonal from the assembled off-diagonals so rows sum to
    // zero up to a single rounding.
    for row in 0..n {
        let off: f64 = stiffness
            .outer_view(row)
            .map(|r| r.iter().filter(|&(c, _)| c != row).map(|(_, v)| *v).sum())
            .unwrap_or(0.0);
        if let Some(d) = stiffness.get_mut(row, row) {
            *d = -off;
        }
    }
    Ok(LaplacianPair {
        stiffness,
        mass,
        clamped_cotangents: clamped,
    })
}
