//! Smallest generalized eigenpairs of the pencil `(L, M)`.
//!
//! Large problems use a block Lanczos iteration on the shift-inverted operator
//! `(L + sM)^{-1} M`, which is self-adjoint in the `M` inner product, with
//! explicit Rayleigh-Ritz projections and thick restarts. Small problems (or
//! requests for most of the spectrum) go through a dense symmetric solve of
//! `M^{-1/2} L M^{-1/2}`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sprs::{CsMat, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use super::laplacian::LaplacianPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Regularizing shift `s` in `L + sM`.
    pub shift: f64,
    /// Backward-error tolerance: a pair converges once
    /// `|L u - lambda M u| <= tol * (|L|_inf + lambda |M|_inf) |u|`.
    pub tolerance: f64,
    pub block_size: usize,
    pub max_restarts: usize,
    /// At or below this size the dense solver is used.
    pub dense_threshold: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            shift: 1e-8,
            tolerance: 1e-12,
            block_size: 8,
            max_restarts: 80,
            dense_threshold: 600,
            seed: 0x5eed,
        }
    }
}

/// Truncated generalized eigenbasis: `phi` is `n x k` with `M`-orthonormal
/// columns, `lambda` ascending and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub phi: Array2<f64>,
    pub lambda: Vec<f64>,
    pub mass: Vec<f64>,
}

impl SpectralBasis {
    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    /// `|L phi_j - lambda_j M phi_j|_2` per column.
    pub fn residuals(&self, pair: &LaplacianPair) -> Vec<f64> {
        let n = self.n();
        let mut lx = vec![0.0; n];
        (0..self.k())
            .map(|j| {
                let col = self.phi.column(j).to_vec();
                pair.apply_stiffness(&col, &mut lx);
                (0..n)
                    .map(|i| (lx[i] - self.lambda[j] * pair.mass[i] * col[i]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// `|L phi_j|_2` per column.
    pub fn stiffness_norms(&self, pair: &LaplacianPair) -> Vec<f64> {
        let mut lx = vec![0.0; self.n()];
        (0..self.k())
            .map(|j| {
                pair.apply_stiffness(&self.phi.column(j).to_vec(), &mut lx);
                lx.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect()
    }

    /// `max |Phi^T M Phi - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mphi = scale_rows(self.phi.view(), &self.mass);
        let gram = self.phi.t().dot(&mphi);
        gram.indexed_iter()
            .map(|((i, j), &g)| (g - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }
}

fn scale_rows(a: ArrayView2<f64>, w: &[f64]) -> Array2<f64> {
    let mut out = a.to_owned();
    for (mut row, &s) in out.axis_iter_mut(Axis(0)).zip(w) {
        row *= s;
    }
    out
}

pub fn solve_eigs(pair: &LaplacianPair, k: usize) -> Result<SpectralBasis> {
    solve_eigs_with(pair, k, &EigenOptions::default())
}

pub fn solve_eigs_with(pair: &LaplacianPair, k: usize, opts: &EigenOptions) -> Result<SpectralBasis> {
    let n = pair.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "requested {k} eigenpairs of a {n}-vertex problem"
        )));
    }
    let b = opts.block_size.max(1);
    let subspace = krylov_dimension(k, b);
    let mut basis = if n <= opts.dense_threshold || subspace + b > n {
        solve_dense(pair, k)?
    } else {
        solve_lanczos(pair, k, opts)?
    };
    fix_signs(&mut basis.phi);
    Ok(basis)
}

fn krylov_dimension(k: usize, b: usize) -> usize {
    (2 * k + 2 * b).max(k + 4 * b)
}

/// Flips each column so its first clearly nonzero entry is positive.
fn fix_signs(phi: &mut Array2<f64>) {
    for mut col in phi.axis_iter_mut(Axis(1)) {
        let peak = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-3 * peak).copied() {
            if first < 0.0 {
                col.mapv_inplace(|v| -v);
            }
        }
    }
}

fn solve_dense(pair: &LaplacianPair, k: usize) -> Result<SpectralBasis> {
    let n = pair.n();
    let inv_sqrt: Vec<f64> = pair.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, row) in pair.stiffness.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            a[(i, j)] = v * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0)
        .ok_or_else(|| Error::ConvergenceFailure {
            iterations: 0,
            worst_residual: f64::INFINITY,
            residuals: vec![],
        })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let mut phi = Array2::zeros((n, k));
    let mut lambda = Vec::with_capacity(k);
    for (c, &j) in order.iter().take(k).enumerate() {
        lambda.push(eig.eigenvalues[j].max(0.0));
        for i in 0..n {
            phi[[i, c]] = eig.eigenvectors[(i, j)] * inv_sqrt[i];
        }
    }
    Ok(SpectralBasis {
        phi,
        lambda,
        mass: pair.mass.clone(),
    })
}

struct ShiftInvert {
    factor: LdlNumeric<f64, usize>,
    mass: Vec<f64>,
    kernel: Array2<f64>,
}

impl ShiftInvert {
    fn new(pair: &LaplacianPair, shift: f64, kernel: Array2<f64>) -> Result<Self> {
        let n = pair.n();
        let mut tri = TriMat::with_capacity((n, n), pair.stiffness.nnz() + n);
        for (i, row) in pair.stiffness.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                tri.add_triplet(i, j, v);
            }
            tri.add_triplet(i, i, shift * pair.mass[i]);
        }
        let shifted: CsMat<f64> = tri.to_csc();
        let factor = Ldl::new()
            .check_symmetry(sprs::SymmetryCheck::DontCheckSymmetry)
            .numeric(shifted.view())
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(ShiftInvert {
            factor,
            mass: pair.mass.clone(),
            kernel,
        })
    }

    /// `(L + sM)^{-1} M x`, projected off the kernel. The kernel component is
    /// amplified by `1/s`, so leaving it in would drown the rest in rounding.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mx: Vec<f64> = x.iter().zip(&self.mass).map(|(a, m)| a * m).collect();
        let mut y = Array1::from(self.factor.solve(&mx));
        project_out(&mut y, self.kernel.view(), &self.mass);
        project_out(&mut y, self.kernel.view(), &self.mass);
        y.to_vec()
    }
}

/// Removes the `M`-orthogonal projection of `y` onto the columns of `basis`,
/// which must be `M`-orthonormal.
fn project_out(y: &mut Array1<f64>, basis: ArrayView2<f64>, mass: &[f64]) {
    if basis.ncols() == 0 {
        return;
    }
    let my: Array1<f64> = y.iter().zip(mass).map(|(a, m)| a * m).collect();
    let coeffs = basis.t().dot(&my);
    *y -= &basis.dot(&coeffs);
}

/// `M`-normalized indicators of the connected components of the stiffness
/// graph. Rows of `L` sum to zero, so these span its kernel exactly.
fn kernel_basis(pair: &LaplacianPair) -> Array2<f64> {
    let n = pair.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, row) in pair.stiffness.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            if j != i && v != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut roots = Vec::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        if label[r] == usize::MAX {
            label[r] = roots.len();
            roots.push(r);
        }
        label[v] = label[r];
    }
    let mut area = vec![0.0; roots.len()];
    for v in 0..n {
        area[label[v]] += pair.mass[v];
    }
    let mut z = Array2::zeros((n, roots.len()));
    for v in 0..n {
        z[[v, label[v]]] = area[label[v]].powf(-0.5);
    }
    z
}

/// `M`-orthonormalizes the columns of `block` against every matrix in
/// `against` and against each other. Columns that collapse are replaced by
/// random directions.
fn orthonormalize_block(
    block: &mut Array2<f64>,
    against: &[ArrayView2<f64>],
    mass: &[f64],
    rng: &mut ChaCha8Rng,
) {
    let m_inner = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(mass).map(|((x, y), m)| x * m * y).sum()
    };
    for j in 0..block.ncols() {
        let mut attempt = 0;
        loop {
            let mut col = block.column(j).to_owned();
            let original = m_inner(col.as_slice().unwrap(), col.as_slice().unwrap()).sqrt();
            for _ in 0..2 {
                for basis in against {
                    project_out(&mut col, *basis, mass);
                }
                for i in 0..j {
                    let prev = block.column(i).to_owned();
                    let d = m_inner(prev.as_slice().unwrap(), col.as_slice().unwrap());
                    col.scaled_add(-d, &prev);
                }
            }
            let norm = m_inner(col.as_slice().unwrap(), col.as_slice().unwrap()).sqrt();
            if norm > 1e-10 * original && norm > 0.0 {
                block.column_mut(j).assign(&(col / norm));
                break;
            }
            attempt += 1;
            assert!(attempt < 16, "could not extend a Krylov basis of dimension {}", block.nrows());
            for dst in block.column_mut(j).iter_mut() {
                *dst = StandardNormal.sample(rng);
            }
        }
    }
}

struct RitzPair {
    theta: f64,
    coeffs: Vec<f64>,
}

fn rayleigh_ritz(v: ArrayView2<f64>, w: ArrayView2<f64>, mass: &[f64]) -> Vec<RitzPair> {
    let mw = scale_rows(w, mass);
    let t = v.t().dot(&mw);
    let d = t.nrows();
    let tm = DMatrix::from_fn(d, d, |i, j| 0.5 * (t[[i, j]] + t[[j, i]]));
    let eig = SymmetricEigen::new(tm);
    let mut pairs: Vec<RitzPair> = (0..d)
        .map(|j| RitzPair {
            theta: eig.eigenvalues[j],
            coeffs: eig.eigenvectors.column(j).iter().copied().collect(),
        })
        .collect();
    pairs.sort_by(|a, b| b.theta.total_cmp(&a.theta));
    pairs
}

fn solve_lanczos(pair: &LaplacianPair, k: usize, opts: &EigenOptions) -> Result<SpectralBasis> {
    let n = pair.n();
    let mass = &pair.mass;
    let kernel = kernel_basis(pair);
    let nk = kernel.ncols();
    if k <= nk {
        return Ok(SpectralBasis {
            phi: kernel.slice(s![.., ..k]).to_owned(),
            lambda: vec![0.0; k],
            mass: mass.clone(),
        });
    }
    // Remaining pairs come from the M-orthogonal complement of the kernel.
    let kr = k - nk;
    let b = opts.block_size.max(1);
    let dim_max = krylov_dimension(kr, b).min(n - nk);
    let keep = (kr + 2 * b).min(dim_max - b);
    let op = ShiftInvert::new(pair, opts.shift, kernel.clone())?;
    let norm_l = pair.stiffness_norm_inf();
    let norm_m = mass.iter().fold(0.0f64, |a, &m| a.max(m));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v = Array2::<f64>::zeros((n, dim_max));
    let mut w = Array2::<f64>::zeros((n, dim_max));
    let mut dim = 0;
    let mut next = Array2::from_shape_simple_fn((n, b), || StandardNormal.sample(&mut rng));
    let mut worst = f64::INFINITY;
    let mut residuals = vec![f64::INFINITY; kr];
    let mut lx = vec![0.0; n];

    for restart in 0..=opts.max_restarts {
        while dim < dim_max {
            let take = b.min(dim_max - dim);
            let mut block = next.slice(s![.., ..take]).to_owned();
            orthonormalize_block(
                &mut block,
                &[kernel.view(), v.slice(s![.., ..dim])],
                mass,
                &mut rng,
            );
            for j in 0..take {
                let col = block.column(j).to_vec();
                let image = op.apply(&col);
                v.column_mut(dim + j).assign(&Array1::from(col));
                w.column_mut(dim + j).assign(&Array1::from(image));
            }
            next = w.slice(s![.., dim..dim + take]).to_owned();
            if take < b {
                next = ndarray::concatenate![
                    Axis(1),
                    next,
                    Array2::from_shape_simple_fn((n, b - take), || StandardNormal.sample(&mut rng))
                ];
            }
            dim += take;
        }

        let ritz = rayleigh_ritz(v.view(), w.view(), mass);
        let y = Array2::from_shape_fn((dim, keep.max(kr)), |(i, j)| ritz[j].coeffs[i]);
        let u = v.dot(&y);
        let au = w.dot(&y);

        let mut lambda = Vec::with_capacity(kr);
        let mut unconverged = Vec::new();
        worst = 0.0;
        for j in 0..kr {
            let col = u.column(j).to_vec();
            pair.apply_stiffness(&col, &mut lx);
            let rq: f64 = lx.iter().zip(&col).map(|(a, b)| a * b).sum();
            let res = (0..n)
                .map(|i| (lx[i] - rq * mass[i] * col[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            let unorm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            residuals[j] = res;
            let rel = res / ((norm_l + rq.abs() * norm_m) * unorm);
            worst = worst.max(rel);
            if rel > opts.tolerance {
                unconverged.push(j);
            }
            lambda.push(rq);
        }
        log::debug!(
            "lanczos restart {restart}: dim {dim}, {} of {kr} unconverged, worst backward error {worst:e}",
            unconverged.len()
        );
        if unconverged.is_empty() {
            let mut order: Vec<usize> = (0..kr).collect();
            order.sort_by(|&a, &b| lambda[a].total_cmp(&lambda[b]));
            let mut phi = Array2::zeros((n, k));
            phi.slice_mut(s![.., ..nk]).assign(&kernel);
            for (c, &j) in order.iter().enumerate() {
                phi.column_mut(nk + c).assign(&u.column(j));
            }
            let mut values = vec![0.0; nk];
            values.extend(order.iter().map(|&j| lambda[j].max(0.0)));
            return Ok(SpectralBasis {
                phi,
                lambda: values,
                mass: mass.clone(),
            });
        }

        // Thick restart: keep the leading Ritz vectors, continue from the
        // residual directions of the unconverged ones.
        v.slice_mut(s![.., ..keep]).assign(&u.slice(s![.., ..keep]));
        w.slice_mut(s![.., ..keep]).assign(&au.slice(s![.., ..keep]));
        dim = keep;
        next = Array2::from_shape_simple_fn((n, b), || StandardNormal.sample(&mut rng));
        for (slot, &j) in unconverged.iter().take(b).enumerate() {
            let theta = ritz[j].theta;
            let r = &au.column(j) - &(&u.column(j) * theta);
            next.column_mut(slot).assign(&r);
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: opts.max_restarts,
        worst_residual: worst,
        residuals,
    })
}
