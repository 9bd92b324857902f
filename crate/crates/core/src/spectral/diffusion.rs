use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Axis};

use super::eigen::SpectralBasis;
use crate::error::{Error, Result};

/// Spectral heat diffusion `Phi_b (exp(-lambda t) * Phi_b^T M u)` over the
/// eigenpairs in `band`, with one time per channel of `u`.
pub fn diffuse(
    basis: &SpectralBasis,
    band: Range<usize>,
    u: ArrayView2<f64>,
    t: &[f64],
) -> Result<Array2<f64>> {
    if band.start >= band.end || band.end > basis.k() {
        return Err(Error::InvalidArgument(format!(
            "band {band:?} outside a basis of {} eigenpairs",
            basis.k()
        )));
    }
    if u.nrows() != basis.n() || t.len() != u.ncols() {
        return Err(Error::ShapeMismatch {
            op: "diffuse",
            left: u.dim(),
            right: (basis.n(), t.len()),
        });
    }
    if let Some(&bad) = t.iter().find(|&&x| !(x >= 0.0)) {
        return Err(Error::NegativeTime(bad));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "diffuse" });
    }
    let phi = basis.phi.slice(s![.., band.clone()]);
    let mut mu = u.to_owned();
    for (mut row, &m) in mu.axis_iter_mut(Axis(0)).zip(&basis.mass) {
        row *= m;
    }
    let mut coeffs = phi.t().dot(&mu);
    for (r, mut row) in coeffs.axis_iter_mut(Axis(0)).enumerate() {
        let lambda = basis.lambda[band.start + r];
        for (c, v) in row.iter_mut().enumerate() {
            *v *= (-lambda * t[c]).exp();
        }
    }
    Ok(phi.dot(&coeffs))
}
