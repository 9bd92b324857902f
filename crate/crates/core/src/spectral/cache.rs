//! On-disk cache for eigenbases.
//!
//! Layout: the magic `MFSB1`, `n` and `k` as little-endian u64, then `Phi`
//! row-major and `lambda` as little-endian f64. Masses are not stored; they
//! are recomputed from the mesh on load.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::eigen::{solve_eigs_with, EigenOptions, SpectralBasis};
use super::laplacian::LaplacianPair;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

pub const MAGIC: &[u8; 5] = b"MFSB1";
pub const CACHE_ENV: &str = "MESHFIELD_CACHE_DIR";

/// Hex SHA-256 over vertex coordinates and face indices.
pub fn mesh_content_hash(mesh: &TriangleMesh) -> String {
    let mut h = Sha256::new();
    h.update((mesh.n_vertices() as u64).to_le_bytes());
    for p in &mesh.vertices {
        for c in p {
            h.update(c.to_le_bytes());
        }
    }
    h.update((mesh.n_faces() as u64).to_le_bytes());
    for f in &mesh.faces {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_basis(mut w: impl Write, basis: &SpectralBasis) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(basis.n() as u64).to_le_bytes())?;
    w.write_all(&(basis.k() as u64).to_le_bytes())?;
    for v in basis.phi.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &basis.lambda {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_basis(mut r: impl Read, mass: Vec<f64>) -> Result<SpectralBasis> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("unreadable basis: {e}")))?;
    if bytes.len() < 21 || &bytes[..5] != MAGIC {
        return Err(Error::Format("missing MFSB1 header".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
    let (n, k) = (word(5), word(13));
    let expected = n
        .checked_mul(k)
        .and_then(|nk| nk.checked_add(k))
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(21));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!("truncated basis for n={n}, k={k}")));
    }
    if mass.len() != n {
        return Err(Error::Incompatible(format!(
            "cached basis has {n} rows, mesh has {} vertices",
            mass.len()
        )));
    }
    let floats: Vec<f64> = bytes[21..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let phi = Array2::from_shape_vec((n, k), floats[..n * k].to_vec())
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(SpectralBasis {
        phi,
        lambda: floats[n * k..].to_vec(),
        mass,
    })
}

pub fn cache_path(dir: &Path, mesh: &TriangleMesh, k: usize) -> PathBuf {
    dir.join(format!("{}_{k}.mfsb", mesh_content_hash(mesh)))
}

/// Loads the basis from `dir` (or `$MESHFIELD_CACHE_DIR`) when present,
/// otherwise solves and stores it there. Without a cache directory this is a
/// plain solve.
pub fn cached_basis(
    mesh: &TriangleMesh,
    pair: &LaplacianPair,
    k: usize,
    dir: Option<&Path>,
    opts: &EigenOptions,
) -> Result<SpectralBasis> {
    let env_dir = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let Some(dir) = dir.map(Path::to_path_buf).or(env_dir) else {
        return solve_eigs_with(pair, k, opts);
    };
    let path = cache_path(&dir, mesh, k);
    if let Ok(file) = fs::File::open(&path) {
        match read_basis(std::io::BufReader::new(file), pair.mass.clone()) {
            Ok(b) => return Ok(b),
            Err(e) => log::warn!("ignoring unusable cache entry {}: {e}", path.display()),
        }
    }
    let basis = solve_eigs_with(pair, k, opts)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_basis(&mut w, &basis).map_err(|e| Error::io(&tmp, e))?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use crate::spectral::assemble_laplacian;

    #[test]
    fn round_trip_is_exact() {
        let m = shapes::icosphere(1);
        let pair = assemble_laplacian(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = cached_basis(&m, &pair, 6, Some(dir.path()), &EigenOptions::default()).unwrap();
        let path = cache_path(dir.path(), &m, 6);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], b"MFSB1");
        assert_eq!(bytes.len(), 21 + 8 * (42 * 6 + 6));
        let b = cached_basis(&m, &pair, 6, Some(dir.path()), &EigenOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hash_tracks_geometry() {
        let a = shapes::icosphere(1);
        let mut b = a.clone();
        assert_eq!(mesh_content_hash(&a), mesh_content_hash(&b));
        b.vertices[0][0] += 1e-12;
        assert_ne!(mesh_content_hash(&a), mesh_content_hash(&b));
    }

    #[test]
    fn rejects_corrupt_and_mismatched_files() {
        assert!(read_basis(&b"MFSB0aaaaaaaaaaaaaaaaaaaa"[..], vec![]).is_err());
        let m = shapes::tetrahedron();
        let basis = crate::spectral::solve_eigs(&assemble_laplacian(&m).unwrap(), 2).unwrap();
        let mut buf = Vec::new();
        write_basis(&mut buf, &basis).unwrap();
        assert!(matches!(read_basis(&buf[..], vec![1.0; 3]), Err(Error::Incompatible(_))));
        assert!(read_basis(&buf[..buf.len() - 1], vec![1.0; 4]).is_err());
    }
}
