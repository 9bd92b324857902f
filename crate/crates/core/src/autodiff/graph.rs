//! Reverse-mode tape over dense `f64` matrices.
//!
//! Nodes are appended in evaluation order, so every input of a node has a
//! smaller index and a single backward sweep in reverse index order visits
//! the graph in reverse topological order.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};
use sprs::CsMat;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A sparse matrix together with its transpose, for use as a fixed left
/// operand.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub matrix: CsMat<f64>,
    pub transpose: CsMat<f64>,
}

impl SparseOperator {
    pub fn new(matrix: CsMat<f64>) -> Self {
        let transpose = matrix.transpose_view().to_csr();
        SparseOperator {
            matrix: matrix.to_csr(),
            transpose,
        }
    }
}

fn sparse_dot(m: &CsMat<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((m.rows(), x.ncols()));
    for (r, row) in m.outer_iterator().enumerate() {
        let mut dst = out.row_mut(r);
        for (c, &w) in row.iter() {
            dst.scaled_add(w, &x.row(c));
        }
    }
    out
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNt(Var, Var),
    /// Fixed dense left factor.
    ConstMatMul(Arc<Array2<f64>>, Var),
    SparseMatMul(Arc<SparseOperator>, Var),
    Add(Var, Var),
    /// `a + 1 b` for a row vector `b`.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Sin(Var, f64),
    Relu(Var),
    Tanh(Var),
    /// `c[r, j] * exp(-lambda[r] * softplus(t[j]))` for a row vector `t`.
    ExpScale(Var, Arc<Vec<f64>>, Var),
    Mean(Var),
    Sum(Var),
    RowNorm(Var),
    RowDot(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Array2<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Diffusion time from its unconstrained parameter.
pub fn diffusion_time(t_hat: f64) -> f64 {
    softplus(t_hat)
}

/// Inverse of [`diffusion_time`] for `t > 0`.
pub fn diffusion_time_inverse(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else {
        t.exp_m1().ln()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// The value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Array2<f64>, name: &'static str) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l != r {
            return Err(Error::ShapeMismatch { op, left: l, right: r });
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push(Op::Constant, value, "constant")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: store.get(id).value.clone(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l.1 != r.0 {
            return Err(Error::ShapeMismatch { op: "matmul", left: l, right: r });
        }
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v, "matmul")
    }

    /// `a * b^T`, the layout used for weights stored as `out x in`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l.1 != r.1 {
            return Err(Error::ShapeMismatch { op: "matmul_nt", left: l, right: r });
        }
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulNt(a, b), v, "matmul_nt")
    }

    pub fn const_matmul(&mut self, c: Arc<Array2<f64>>, a: Var) -> Result<Var> {
        let r = self.shape(a);
        if c.ncols() != r.0 {
            return Err(Error::ShapeMismatch { op: "const_matmul", left: c.dim(), right: r });
        }
        let v = c.dot(self.value(a));
        self.push(Op::ConstMatMul(c, a), v, "const_matmul")
    }

    pub fn sparse_matmul(&mut self, s: Arc<SparseOperator>, a: Var) -> Result<Var> {
        let r = self.shape(a);
        if s.matrix.cols() != r.0 {
            return Err(Error::ShapeMismatch { op: "sparse_matmul", left: s.matrix.shape(), right: r });
        }
        let v = sparse_dot(&s.matrix, self.value(a));
        self.push(Op::SparseMatMul(s, a), v, "sparse_matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v, "add")
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (l, r) = (self.shape(a), self.shape(b));
        if r != (1, l.1) {
            return Err(Error::ShapeMismatch { op: "add_row", left: l, right: r });
        }
        let v = self.value(a) + self.value(b);
        self.push(Op::AddRow(a, b), v, "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let v = self.value(a) / self.value(b);
        self.push(Op::Div(a, b), v, "div")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v, "scale")
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("empty concat".into()))?;
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::ShapeMismatch { op: "concat", left: self.shape(first), right: self.shape(p) });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        self.push(Op::Concat(parts.to_vec()), v, "concat")
    }

    /// `sin(alpha * a)`.
    pub fn sin(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let v = self.value(a).mapv(|x| (alpha * x).sin());
        self.push(Op::Sin(a, alpha), v, "sin")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v, "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v, "tanh")
    }

    /// Scales row `r`, column `j` of `c` by `exp(-lambda[r] * softplus(t_hat[j]))`.
    pub fn exp_scale(&mut self, c: Var, lambda: Arc<Vec<f64>>, t_hat: Var) -> Result<Var> {
        let (l, r) = (self.shape(c), self.shape(t_hat));
        if r != (1, l.1) || lambda.len() != l.0 {
            return Err(Error::ShapeMismatch { op: "exp_scale", left: l, right: (lambda.len(), r.1) });
        }
        let t: Vec<f64> = self.value(t_hat).iter().map(|&x| softplus(x)).collect();
        let mut v = self.value(c).clone();
        for (row, mut vals) in v.axis_iter_mut(Axis(0)).enumerate() {
            for (j, x) in vals.iter_mut().enumerate() {
                *x *= (-lambda[row] * t[j]).exp();
            }
        }
        self.push(Op::ExpScale(c, lambda, t_hat), v, "exp_scale")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(Op::Mean(a), v, "mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), v, "sum")
    }

    /// Euclidean norm of each row, as an `n x 1` column.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map_axis(Axis(1), |r| r.dot(&r).sqrt()).insert_axis(Axis(1));
        self.push(Op::RowNorm(a), v, "row_norm")
    }

    /// Row-wise inner products, as an `n x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let v = Zip::from(x.rows())
            .and(y.rows())
            .map_collect(|p, q| p.dot(&q))
            .insert_axis(Axis(1));
        self.push(Op::RowDot(a, b), v, "row_dot")
    }

    /// Adjoints of every node with respect to the scalar `root`.
    pub fn adjoints(&self, root: Var) -> Result<Vec<Option<Array2<f64>>>> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Array2::ones((1, 1)));
        fn acc(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot => *slot = Some(g),
            }
        }
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    acc(&mut adj, *a, g.dot(&self.value(*b).t()));
                    acc(&mut adj, *b, self.value(*a).t().dot(&g));
                }
                Op::MatMulNt(a, b) => {
                    acc(&mut adj, *a, g.dot(self.value(*b)));
                    acc(&mut adj, *b, g.t().dot(self.value(*a)));
                }
                Op::ConstMatMul(c, a) => acc(&mut adj, *a, c.t().dot(&g)),
                Op::SparseMatMul(s, a) => acc(&mut adj, *a, sparse_dot(&s.transpose, &g)),
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.clone());
                }
                Op::AddRow(a, b) => {
                    acc(&mut adj, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut adj, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -&g);
                    acc(&mut adj, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut adj, *a, &g * self.value(*b));
                    acc(&mut adj, *b, &g * self.value(*a));
                }
                Op::Div(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    acc(&mut adj, *a, &g / y);
                    let mut gb = &g * x;
                    Zip::from(&mut gb).and(y).for_each(|v, &d| *v = -*v / (d * d));
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut adj, *a, &g * *c),
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut adj, p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::Sin(a, alpha) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|v, &x| *v *= alpha * (alpha * x).cos());
                    acc(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|v, &x| {
                        if x <= 0.0 {
                            *v = 0.0
                        }
                    });
                    acc(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(&node.value).for_each(|v, &y| *v *= 1.0 - y * y);
                    acc(&mut adj, *a, ga);
                }
                Op::ExpScale(c, lambda, t_hat) => {
                    let th = self.value(*t_hat);
                    let cv = self.value(*c);
                    let mut gc = g.clone();
                    let mut gt = Array2::zeros(th.raw_dim());
                    for (r, mut row) in gc.axis_iter_mut(Axis(0)).enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            let x = th[[0, j]];
                            let scale = (-lambda[r] * softplus(x)).exp();
                            gt[[0, j]] -= *v * cv[[r, j]] * scale * lambda[r] * sigmoid(x);
                            *v *= scale;
                        }
                    }
                    acc(&mut adj, *c, gc);
                    acc(&mut adj, *t_hat, gt);
                }
                Op::Mean(a) => {
                    let (shape, n) = (self.shape(*a), self.value(*a).len() as f64);
                    acc(&mut adj, *a, Array2::from_elem(shape, g[[0, 0]] / n));
                }
                Op::Sum(a) => acc(&mut adj, *a, Array2::from_elem(self.shape(*a), g[[0, 0]])),
                Op::RowNorm(a) => {
                    let mut ga = self.value(*a).clone();
                    for (r, mut row) in ga.axis_iter_mut(Axis(0)).enumerate() {
                        let norm = node.value[[r, 0]];
                        let f = if norm > 0.0 { g[[r, 0]] / norm } else { 0.0 };
                        row *= f;
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::RowDot(a, b) => {
                    let col = g.column(0).insert_axis(Axis(1));
                    acc(&mut adj, *a, self.value(*b) * &col);
                    acc(&mut adj, *b, self.value(*a) * &col);
                }
            }
            adj[i] = Some(g);
        }
        Ok(adj)
    }

    /// Accumulates `d root / d p` into the gradient of every trainable
    /// parameter reached from `root`. Parameters off the path are untouched.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        let adj = self.adjoints(root)?;
        for (node, g) in self.nodes.iter().zip(adj) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let p = store.get_mut(*id);
                if p.trainable {
                    p.grad += &g;
                }
            }
        }
        Ok(())
    }
}
