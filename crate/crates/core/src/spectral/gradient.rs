use nalgebra::{Matrix2, Vector2, Vector3};
use ndarray::Array2;
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::mesh::{vertex_normals, TriangleMesh};

/// Per-vertex tangent frames and the sparse one-ring least-squares gradient.
///
/// `gx` and `gy` map a scalar vertex field to the two gradient components
/// expressed in each vertex's frame.
#[derive(Debug, Clone)]
pub struct TangentGradientOperator {
    pub normals: Vec<[f64; 3]>,
    pub frames: Vec<[[f64; 3]; 2]>,
    pub gx: CsMat<f64>,
    pub gy: CsMat<f64>,
}

impl TangentGradientOperator {
    pub fn n(&self) -> usize {
        self.normals.len()
    }

    /// Gradient of a scalar field as an `n x 2` array.
    pub fn apply(&self, u: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros((self.n(), 2));
        for (k, g) in [&self.gx, &self.gy].into_iter().enumerate() {
            for (row, vec) in g.outer_iterator().enumerate() {
                out[[row, k]] = vec.iter().map(|(c, &w)| w * u[c]).sum();
            }
        }
        out
    }
}

fn tangent_frame(n: Vector3<f64>) -> [Vector3<f64>; 2] {
    let project = |a: Vector3<f64>| a - n * n.dot(&a);
    let mut e1 = project(Vector3::x());
    if e1.norm() < 1e-6 {
        e1 = project(Vector3::y());
    }
    let e1 = e1.normalize();
    [e1, n.cross(&e1)]
}

pub fn tangent_gradients(mesh: &TriangleMesh) -> Result<TangentGradientOperator> {
    let n = mesh.n_vertices();
    let normals = vertex_normals(mesh)?;
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &mesh.edges() {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    let mut tx = TriMat::new((n, n));
    let mut ty = TriMat::new((n, n));
    let mut normal_rows = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for v in 0..n {
        if neighbors[v].is_empty() {
            return Err(Error::IsolatedVertex { vertex: v });
        }
        let nv = Vector3::new(normals.values[[v, 0]], normals.values[[v, 1]], normals.values[[v, 2]]);
        let [e1, e2] = tangent_frame(nv);
        let pv = mesh.position(v);
        let d: Vec<Vector2<f64>> = neighbors[v]
            .iter()
            .map(|&j| {
                let e = mesh.position(j) - pv;
                Vector2::new(e.dot(&e1), e.dot(&e2))
            })
            .collect();
        let mut dtd = Matrix2::zeros();
        for r in &d {
            dtd += r * r.transpose();
        }
        // A one-neighbor ring only determines the gradient along one edge.
        dtd += Matrix2::identity() * (1e-12 * dtd.trace());
        let inv = dtd.try_inverse().ok_or(Error::DegenerateNormal { vertex: v })?;
        let (mut sx, mut sy) = (0.0, 0.0);
        for (r, &j) in d.iter().zip(&neighbors[v]) {
            let w = inv * r;
            tx.add_triplet(v, j, w.x);
            ty.add_triplet(v, j, w.y);
            sx += w.x;
            sy += w.y;
        }
        tx.add_triplet(v, v, -sx);
        ty.add_triplet(v, v, -sy);
        normal_rows.push([nv.x, nv.y, nv.z]);
        frames.push([[e1.x, e1.y, e1.z], [e2.x, e2.y, e2.z]]);
    }
    Ok(TangentGradientOperator {
        normals: normal_rows,
        frames,
        gx: tx.to_csr(),
        gy: ty.to_csr(),
    })
}
