use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use crate::autodiff::SparseOperator;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::spectral::{
    assemble_laplacian, cache::cached_basis, split_spectrum, tangent_gradients, EigenOptions, SpectralBasis,
    SpectrumBands,
};

/// Fixed factors of banded diffusion: `project = Phi_b^T M`, `expand = Phi_b`.
#[derive(Debug, Clone)]
pub struct BandOperators {
    pub band: Range<usize>,
    pub project: Arc<Array2<f64>>,
    pub expand: Arc<Array2<f64>>,
    pub lambda: Arc<Vec<f64>>,
}

impl BandOperators {
    pub fn new(basis: &SpectralBasis, band: Range<usize>) -> Self {
        let expand = basis.phi.slice(s![.., band.clone()]).to_owned();
        let mut project = expand.t().to_owned();
        for (mut col, &m) in project.axis_iter_mut(Axis(1)).zip(&basis.mass) {
            col *= m;
        }
        BandOperators {
            lambda: Arc::new(basis.lambda[band.clone()].to_vec()),
            band,
            project: Arc::new(project),
            expand: Arc::new(expand),
        }
    }
}

/// Everything a model needs to run on one mesh.
#[derive(Debug, Clone)]
pub struct MeshOperators {
    pub positions: Array2<f64>,
    pub basis: Arc<SpectralBasis>,
    pub bands: SpectrumBands,
    pub levels: Vec<BandOperators>,
    pub gradients: Option<[Arc<SparseOperator>; 2]>,
    pub mean_edge_length: f64,
}

impl MeshOperators {
    /// Assembles the Laplacian, solves for `k_eig` eigenpairs (through the
    /// cache when a directory is configured) and splits them into `levels`
    /// bands.
    pub fn build(
        mesh: &TriangleMesh,
        k_eig: usize,
        levels: usize,
        with_gradients: bool,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        let pair = assemble_laplacian(mesh)?;
        let k = k_eig.min(mesh.n_vertices());
        if k < k_eig {
            log::warn!("mesh has {} vertices; using {k} eigenpairs instead of {k_eig}", mesh.n_vertices());
        }
        let basis = cached_basis(mesh, &pair, k, cache_dir, &EigenOptions::default())?;
        Self::from_basis(mesh, Arc::new(basis), levels, with_gradients)
    }

    pub fn from_basis(
        mesh: &TriangleMesh,
        basis: Arc<SpectralBasis>,
        levels: usize,
        with_gradients: bool,
    ) -> Result<Self> {
        if basis.n() != mesh.n_vertices() {
            return Err(Error::Incompatible(format!(
                "basis has {} rows, mesh has {} vertices",
                basis.n(),
                mesh.n_vertices()
            )));
        }
        let bands = split_spectrum(basis.k(), levels)?;
        let level_ops = bands.ranges.iter().map(|r| BandOperators::new(&basis, r.clone())).collect();
        let gradients = if with_gradients {
            let g = tangent_gradients(mesh)?;
            Some([Arc::new(SparseOperator::new(g.gx)), Arc::new(SparseOperator::new(g.gy))])
        } else {
            None
        };
        Ok(MeshOperators {
            positions: mesh.positions_array(),
            basis,
            bands,
            levels: level_ops,
            gradients,
            mean_edge_length: mesh.mean_edge_length(),
        })
    }

    pub fn n(&self) -> usize {
        self.positions.nrows()
    }
}
