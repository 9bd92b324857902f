//! Procedural meshes used as fixtures, smoke inputs and CLI demos.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::TriangleMesh;

fn build(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>, name: &str) -> TriangleMesh {
    TriangleMesh::new(vertices, faces, None)
        .expect("procedural mesh is valid")
        .with_source(format!("generated:{name}"))
}

pub fn tetrahedron() -> TriangleMesh {
    let v = vec![
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    let f = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    build(v, f, "tetrahedron")
}

pub fn equilateral_triangle(side: f64) -> TriangleMesh {
    let h = side * 3f64.sqrt() / 2.0;
    build(
        vec![[0.0, 0.0, 0.0], [side, 0.0, 0.0], [side / 2.0, h, 0.0]],
        vec![[0, 1, 2]],
        "equilateral",
    )
}

/// Right isoceles triangle with unit legs; the right angle sits at vertex 0.
pub fn right_isoceles_triangle() -> TriangleMesh {
    build(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2]],
        "right-isoceles",
    )
}

/// Subdivided icosahedron projected to the unit sphere (10 * 4^k + 2 vertices).
pub fn icosphere(subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    for p in &mut v {
        let len = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        *p = [p[0] / len, p[1] / len, p[2] / len];
    }
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<[f64; 3]>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (v[a], v[b]);
                let m = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
                let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                v.push([m[0] / len, m[1] / len, m[2] / len]);
                v.len() - 1
            })
        };
        for &[a, b, c] in &f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    build(v, f, &format!("icosphere{subdivisions}"))
}

/// Latitude/longitude sphere with `2 + (rings - 1) * segments` vertices.
pub fn uv_sphere(rings: usize, segments: usize) -> TriangleMesh {
    assert!(rings >= 2 && segments >= 3);
    let mut v = vec![[0.0, 0.0, 1.0]];
    for i in 1..rings {
        let theta = PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            v.push([theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]);
        }
    }
    v.push([0.0, 0.0, -1.0]);
    let south = v.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * segments + (j % segments);
    let mut f = Vec::new();
    for j in 0..segments {
        f.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
            f.push([a, c, d]);
            f.push([a, d, b]);
        }
    }
    for j in 0..segments {
        f.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    build(v, f, &format!("uvsphere{rings}x{segments}"))
}

pub fn torus(major: usize, minor: usize, big_r: f64, small_r: f64) -> TriangleMesh {
    let mut v = Vec::with_capacity(major * minor);
    for i in 0..major {
        let u = 2.0 * PI * i as f64 / major as f64;
        for j in 0..minor {
            let w = 2.0 * PI * j as f64 / minor as f64;
            let r = big_r + small_r * w.cos();
            v.push([r * u.cos(), r * u.sin(), small_r * w.sin()]);
        }
    }
    let idx = |i: usize, j: usize| (i % major) * minor + (j % minor);
    let mut f = Vec::with_capacity(2 * major * minor);
    for i in 0..major {
        for j in 0..minor {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    build(v, f, &format!("torus{major}x{minor}"))
}

/// Flat `nx x ny` cell grid in the z = 0 plane spanning `[0, size]^2`, CCW faces.
pub fn grid(nx: usize, ny: usize, size: f64) -> TriangleMesh {
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            v.push([size * i as f64 / nx as f64, size * j as f64 / ny as f64, 0.0]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut f = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            f.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            f.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    build(v, f, &format!("grid{nx}x{ny}"))
}

/// Unit sphere displaced radially by `1 + amplitude * sin(kx x) sin(ky y) sin(kz z)`.
pub fn bumpy_sphere(subdivisions: usize, amplitude: f64, freq: [f64; 3]) -> TriangleMesh {
    let mut m = icosphere(subdivisions);
    for p in &mut m.vertices {
        let s = 1.0
            + amplitude * (freq[0] * p[0]).sin() * (freq[1] * p[1]).sin() * (freq[2] * p[2]).sin();
        *p = [p[0] * s, p[1] * s, p[2] * s];
    }
    m.source_path = format!("generated:bumpy{subdivisions}");
    m
}

/// Concatenates meshes into one multi-component mesh, offsetting each copy
/// along x so they do not overlap.
pub fn disjoint_union(parts: &[TriangleMesh]) -> TriangleMesh {
    let mut v = Vec::new();
    let mut f = Vec::new();
    for (k, part) in parts.iter().enumerate() {
        let base = v.len();
        let shift = 3.0 * k as f64;
        v.extend(part.vertices.iter().map(|p| [p[0] + shift, p[1], p[2]]));
        f.extend(part.faces.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }
    build(v, f, "union")
}
