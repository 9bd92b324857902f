//! Triangle meshes, per-vertex fields and the geometric helpers shared by the
//! spectral operators and the experiment harness.

mod io;
pub mod shapes;
mod subdivide;
mod synth;

use std::collections::HashMap;

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_mesh, read_obj, read_ply, save_obj, write_obj, write_ply, MeshFormat, PlyEncoding};
pub use subdivide::{split_edge_count, subdivide_threshold};
pub use synth::{hsv_to_rgb, partition_by_x, perlin_scalar, synth_patchwork_rgb};

/// Faces whose area (measured after mapping the mesh into the unit sphere)
/// falls below this are rejected.
pub const MIN_NORMALIZED_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub uv: Option<Vec<[f64; 2]>>,
    pub source_path: String,
}

impl TriangleMesh {
    /// Builds a mesh and checks every structural invariant.
    pub fn new(
        vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
        uv: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        let mesh = TriangleMesh {
            vertices,
            faces,
            uv,
            source_path: String::new(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source_path = source.into();
        self
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite vertex position".into()));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidArgument(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace { face: fi, area: 0.0 });
            }
        }
        if let Some(uv) = &self.uv {
            if uv.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "uv has {} rows, mesh has {n} vertices",
                    uv.len()
                )));
            }
        }
        let radius = self.bounding_radius();
        let scale = if radius > 0.0 { radius * radius } else { 1.0 };
        for fi in 0..self.faces.len() {
            let area = self.face_area(fi);
            if !(area / scale > MIN_NORMALIZED_AREA) {
                return Err(Error::DegenerateFace { face: fi, area });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn position(&self, v: usize) -> Vector3<f64> {
        Vector3::from(self.vertices[v])
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let n = self.vertices.len().max(1) as f64;
        self.vertices
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p))
            / n
    }

    /// Largest distance from the vertex centroid.
    pub fn bounding_radius(&self) -> f64 {
        let c = self.centroid();
        self.vertices
            .iter()
            .map(|p| (Vector3::from(*p) - c).norm())
            .fold(0.0, f64::max)
    }

    /// Unnormalized face normal, `(b - a) x (c - a)`; its length is twice the area.
    pub fn face_cross(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f];
        let pa = self.position(a);
        (self.position(b) - pa).cross(&(self.position(c) - pa))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Unique undirected edges `(lo, hi)` in first-seen order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if seen.insert(key, ()).is_none() {
                    out.push(key);
                }
            }
        }
        out
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        if edges.is_empty() {
            return 0.0;
        }
        edges
            .iter()
            .map(|&(a, b)| (self.position(a) - self.position(b)).norm())
            .sum::<f64>()
            / edges.len() as f64
    }

    /// Number of incident faces per vertex.
    pub fn vertex_valence(&self) -> Vec<usize> {
        let mut count = vec![0; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                count[v] += 1;
            }
        }
        count
    }

    /// Connected component label per vertex (face connectivity), plus the
    /// component count. Isolated vertices form their own component.
    pub fn connected_components(&self) -> (Vec<usize>, usize) {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &self.faces {
            for k in 1..3 {
                let (ra, rb) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut roots = HashMap::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            let next = roots.len();
            label[v] = *roots.entry(r).or_insert(next);
        }
        let count = roots.len();
        (label, count)
    }

    /// Translates and scales the mesh in place by `x -> (x - shift) * scale`.
    pub fn transform(&mut self, shift: Vector3<f64>, scale: f64) {
        for p in &mut self.vertices {
            let q = (Vector3::from(*p) - shift) * scale;
            *p = [q.x, q.y, q.z];
        }
    }

    /// Reverses the orientation of every face.
    pub fn flipped(&self) -> TriangleMesh {
        let mut out = self.clone();
        for f in &mut out.faces {
            f.swap(1, 2);
        }
        out
    }

    /// Positions as an `n x 3` array.
    pub fn positions_array(&self) -> Array2<f64> {
        let n = self.vertices.len();
        Array2::from_shape_fn((n, 3), |(i, j)| self.vertices[i][j])
    }

    pub fn uv_array(&self) -> Option<Array2<f64>> {
        self.uv.as_ref().map(|uv| {
            Array2::from_shape_fn((uv.len(), 2), |(i, j)| uv[i][j])
        })
    }
}

/// Centers the mesh at its vertex centroid and scales it so the farthest
/// vertex lies on the unit sphere.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    let n = mesh.n_vertices();
    if n < 3 {
        return Err(Error::EmptyMesh(n));
    }
    let c = mesh.centroid();
    let radius = mesh.bounding_radius();
    if !(radius > 0.0) {
        return Err(Error::EmptyMesh(n));
    }
    let mut out = mesh.clone();
    out.transform(c, 1.0 / radius);
    // Remove the residual drift left by rounding in the first pass.
    let drift = out.centroid();
    out.transform(drift, 1.0);
    let r = out.bounding_radius();
    out.transform(Vector3::zeros(), 1.0 / r);
    Ok(out)
}

/// Area-weighted vertex normals.
pub fn vertex_normals(mesh: &TriangleMesh) -> Result<VertexField> {
    let n = mesh.n_vertices();
    let mut acc = vec![Vector3::<f64>::zeros(); n];
    let mut touched = vec![false; n];
    for (fi, f) in mesh.faces.iter().enumerate() {
        // |cross| = 2 * area, so this is the area-weighted unit normal up to a factor 2.
        let cross = mesh.face_cross(fi);
        for &v in f {
            acc[v] += cross;
            touched[v] = true;
        }
    }
    let mut values = Array2::zeros((n, 3));
    for v in 0..n {
        if !touched[v] {
            return Err(Error::IsolatedVertex { vertex: v });
        }
        let len = acc[v].norm();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::DegenerateNormal { vertex: v });
        }
        let u = acc[v] / len;
        values[[v, 0]] = u.x;
        values[[v, 1]] = u.y;
        values[[v, 2]] = u.z;
    }
    VertexField::new(values, ChannelSemantics::Normal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSemantics {
    Rgb,
    Uv,
    Normal,
    Scalar,
}

impl ChannelSemantics {
    pub fn channels(self) -> usize {
        match self {
            ChannelSemantics::Rgb | ChannelSemantics::Normal => 3,
            ChannelSemantics::Uv => 2,
            ChannelSemantics::Scalar => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexField {
    pub values: Array2<f64>,
    pub semantics: ChannelSemantics,
}

impl VertexField {
    pub fn new(values: Array2<f64>, semantics: ChannelSemantics) -> Result<Self> {
        if values.ncols() != semantics.channels() {
            return Err(Error::InvalidArgument(format!(
                "{semantics:?} field needs {} channels, got {}",
                semantics.channels(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "vertex field" });
        }
        Ok(VertexField { values, semantics })
    }

    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        let values = Array2::from_shape_vec((n, 1), values).expect("column shape");
        VertexField::new(values, ChannelSemantics::Scalar)
    }

    pub fn n_vertices(&self) -> usize {
        self.values.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexPartition {
    pub labels: Vec<usize>,
    pub group_count: usize,
}

impl VertexPartition {
    pub fn new(labels: Vec<usize>, group_count: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= group_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {group_count})"
            )));
        }
        Ok(VertexPartition {
            labels,
            group_count,
        })
    }

    /// Vertex indices belonging to `group`.
    pub fn members(&self, group: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(v, &l)| (l == group).then_some(v))
            .collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.group_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}
