//! Central finite-difference verification of tape gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

/// Denominator floor in the entrywise relative error, so entries whose true
/// derivative is zero are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub parameter: String,
    pub checked: usize,
    /// `max |a - n| / max(|a|, |n|, ABS_FLOOR)` over checked entries.
    pub max_rel_error: f64,
}

/// Compares the tape gradient of `loss` with central differences of step
/// `h` for every trainable parameter. At most `max_entries` entries per
/// parameter are probed, spread evenly over the tensor.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    h: f64,
    max_entries: usize,
    loss: F,
) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var)>,
{
    store.zero_grad();
    let (g, root) = loss(store)?;
    g.backward(root, store)?;
    let mut reports = Vec::new();
    for pi in 0..store.len() {
        let id = super::ParamId(pi);
        if !store.get(id).trainable {
            continue;
        }
        let analytic = store.get(id).grad.clone();
        let (len, cols) = (analytic.len(), analytic.ncols());
        let stride = len.div_ceil(max_entries.max(1)).max(1);
        let mut worst = 0.0f64;
        let mut checked = 0;
        for idx in (0..len).step_by(stride) {
            let (r, c) = (idx / cols, idx % cols);
            let orig = store.get(id).value[[r, c]];
            store.get_mut(id).value[[r, c]] = orig + h;
            let (gp, rp) = loss(store)?;
            store.get_mut(id).value[[r, c]] = orig - h;
            let (gm, rm) = loss(store)?;
            store.get_mut(id).value[[r, c]] = orig;
            let numeric = (gp.scalar(rp) - gm.scalar(rm)) / (2.0 * h);
            let a = analytic[[r, c]];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR));
            checked += 1;
        }
        reports.push(GradCheckReport {
            parameter: store.get(id).name.clone(),
            checked,
            max_rel_error: worst,
        });
    }
    store.zero_grad();
    Ok(reports)
}
