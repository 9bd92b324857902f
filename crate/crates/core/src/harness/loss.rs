use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Rows with a smaller Euclidean norm are rejected by the cosine loss.
pub const ZERO_ROW: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Cosine,
}

fn same_shape(op: &'static str, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch { op, left: a.dim(), right: b.dim() });
    }
    Ok(())
}

fn check_rows(y: ArrayView2<f64>) -> Result<()> {
    for (row, r) in y.axis_iter(Axis(0)).enumerate() {
        if !(r.dot(&r).sqrt() >= ZERO_ROW) {
            return Err(Error::ZeroVector { row });
        }
    }
    Ok(())
}

/// `(1/n) sum_v |y(v) - t(v)|^2`, normalized by vertices only.
pub fn loss_mse(y: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    same_shape("loss_mse", y, target)?;
    let n = y.nrows().max(1) as f64;
    Ok(y.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `(1/n) sum_v (1 - <y, t> / (|y| |t|))`.
pub fn loss_cosine(y: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    same_shape("loss_cosine", y, target)?;
    check_rows(target)?;
    check_rows(y)?;
    let n = y.nrows().max(1) as f64;
    let total: f64 = y
        .axis_iter(Axis(0))
        .zip(target.axis_iter(Axis(0)))
        .map(|(a, b)| 1.0 - a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()))
        .sum();
    Ok(total / n)
}

pub fn evaluate_loss(kind: LossKind, y: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    match kind {
        LossKind::Mse => loss_mse(y, target),
        LossKind::Cosine => loss_cosine(y, target),
    }
}

/// Records the loss on the tape and returns the scalar node.
pub fn loss_on_graph(g: &mut Graph, kind: LossKind, y: Var, target: &Array2<f64>) -> Result<Var> {
    same_shape("loss", g.value(y).view(), target.view())?;
    let n = target.nrows().max(1) as f64;
    match kind {
        LossKind::Mse => {
            let t = g.constant(target.clone())?;
            let d = g.sub(y, t)?;
            let sq = g.mul(d, d)?;
            let s = g.sum(sq)?;
            g.scale(s, 1.0 / n)
        }
        LossKind::Cosine => {
            check_rows(target.view())?;
            check_rows(g.value(y).view())?;
            let t = g.constant(target.clone())?;
            let tn = target.map_axis(Axis(1), |r| r.dot(&r).sqrt()).insert_axis(Axis(1));
            let tn = g.constant(tn)?;
            let dot = g.row_dot(y, t)?;
            let yn = g.row_norm(y)?;
            let denom = g.mul(yn, tn)?;
            let ratio = g.div(dot, denom)?;
            let mean = g.mean(ratio)?;
            let neg = g.scale(mean, -1.0)?;
            let one = g.constant(Array2::ones((1, 1)))?;
            g.add(neg, one)
        }
    }
}
