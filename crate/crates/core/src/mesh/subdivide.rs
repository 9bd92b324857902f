//! Linear midpoint subdivision that only splits edges longer than a threshold.

use std::collections::HashMap;

use super::TriangleMesh;
use crate::error::{Error, Result};

/// Number of edges of face `f` strictly longer than `threshold`.
pub fn split_edge_count(mesh: &TriangleMesh, f: usize, threshold: f64) -> usize {
    let t = mesh.faces[f];
    (0..3)
        .filter(|&k| (mesh.position(t[k]) - mesh.position(t[(k + 1) % 3])).norm() > threshold)
        .count()
}

/// Splits every edge longer than `edge_threshold` at its midpoint and
/// retriangulates each face by its split count (1 -> 2, 2 -> 3, 3 -> 4
/// triangles). Orientation is preserved; UVs are dropped.
pub fn subdivide_threshold(mesh: &TriangleMesh, edge_threshold: f64) -> Result<TriangleMesh> {
    if !(edge_threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "edge threshold must be positive, got {edge_threshold}"
        )));
    }
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    // First pass decides splits per undirected edge so both faces agree.
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            if midpoints.contains_key(&key) {
                continue;
            }
            let (pa, pb) = (mesh.position(a), mesh.position(b));
            if (pa - pb).norm() > edge_threshold {
                let m = (pa + pb) * 0.5;
                vertices.push([m.x, m.y, m.z]);
                midpoints.insert(key, vertices.len() - 1);
            }
        }
    }

    let dist = |a: usize, b: usize, v: &[[f64; 3]]| {
        let (p, q) = (v[a], v[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let mid = |a: usize, b: usize| midpoints.get(&(a.min(b), a.max(b))).copied();

    let mut faces = Vec::with_capacity(mesh.faces.len() * 2);
    for f in &mesh.faces {
        let splits: Vec<Option<usize>> = (0..3).map(|k| mid(f[k], f[(k + 1) % 3])).collect();
        match splits.iter().filter(|s| s.is_some()).count() {
            0 => faces.push(*f),
            1 => {
                // Rotate so the split edge is (a, b).
                let k = splits.iter().position(Option::is_some).unwrap();
                let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let m = splits[k].unwrap();
                faces.push([a, m, c]);
                faces.push([m, b, c]);
            }
            2 => {
                // Rotate so the unsplit edge is (c, a); edges (a, b) and (b, c) split.
                let k = (splits.iter().position(Option::is_none).unwrap() + 1) % 3;
                let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let mab = splits[k].unwrap();
                let mbc = splits[(k + 1) % 3].unwrap();
                faces.push([mab, b, mbc]);
                // Quad (a, mab, mbc, c): cut along the shorter diagonal.
                if dist(a, mbc, &vertices) <= dist(mab, c, &vertices) {
                    faces.push([a, mab, mbc]);
                    faces.push([a, mbc, c]);
                } else {
                    faces.push([a, mab, c]);
                    faces.push([mab, mbc, c]);
                }
            }
            _ => {
                let (a, b, c) = (f[0], f[1], f[2]);
                let (mab, mbc, mca) = (splits[0].unwrap(), splits[1].unwrap(), splits[2].unwrap());
                faces.push([a, mab, mca]);
                faces.push([mab, b, mbc]);
                faces.push([mca, mbc, c]);
                faces.push([mab, mbc, mca]);
            }
        }
    }
    Ok(TriangleMesh::new(vertices, faces, None)?.with_source(mesh.source_path.clone()))
}
