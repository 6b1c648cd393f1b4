//! Reverse-mode tape.
//!
//! Every primitive appends one node holding its forward value. `backward`
//! walks the nodes once in reverse order, accumulating vector-Jacobian
//! products into per-node gradient slots. Nodes that do not depend on any
//! leaf are flagged constant and skipped during the reverse sweep.

use std::sync::Arc;

use nalgebra::{Cholesky, LU};

use super::tensor::{dot, gemm, Tensor};
use crate::error::{Error, Result};
use crate::linalg::{dmatrix_to_tensor, tensor_to_dmatrix, CsrMatrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Const,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    SpMatMul { m: Arc<CsrMatrix>, a: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    MulRow { a: Var, row: Var },
    MulCol { a: Var, col: Var },
    Scale { a: Var, s: f64 },
    AddScalar(Var),
    ScaleBy { a: Var, s: Var },
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { a: Var, inv_std: Vec<f64> },
    Gather { a: Var, idx: Arc<Vec<usize>> },
    ScatterAdd { a: Var, idx: Arc<Vec<usize>> },
    CosineRows { a: Var, b: Var },
    Sum(Var),
    Mean(Var),
    FrobSq(Var),
    RowSum(Var),
    LinearSolve { a: Var, b: Var },
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation over dense tensors.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient slots produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, or zeros of `like`'s shape when no path reaches it.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Const,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = gemm(self.value(a), ta, self.value(b), tb)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", value, Op::MatMul { a, b, ta, tb }, ng)
    }

    /// Sparse constant matrix times a dense node.
    pub fn sparse_matmul(&mut self, m: Arc<CsrMatrix>, a: Var) -> Result<Var> {
        let value = m.mul_dense(self.value(a))?;
        let ng = self.needs(a);
        self.push("sparse_matmul", value, Op::SpMatMul { m, a }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push("add", value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push("sub", value, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push("mul", value, Op::Mul(a, b), ng)
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let cv = self.constant(c.clone());
        self.add(a, cv)
    }

    /// `a + row` with `row` (1 x c) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", av.shape(), rv.shape())));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push("add_row", value, Op::AddRow { a, row }, ng)
    }

    /// `a * row` with `row` (1 x c) broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::shape("mul_row", format!("{:?} * {:?}", av.shape(), rv.shape())));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *o *= b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push("mul_row", value, Op::MulRow { a, row }, ng)
    }

    /// `a * col` with `col` (n x 1) broadcast over the columns of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(Error::shape("mul_col", format!("{:?} * {:?}", av.shape(), cv.shape())));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let s = cv.data()[r];
            for o in value.row_mut(r) {
                *o *= s;
            }
        }
        let ng = self.needs(a) || self.needs(col);
        self.push("mul_col", value, Op::MulCol { a, col }, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push("scale", value, Op::Scale { a, s }, ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + s);
        let ng = self.needs(a);
        self.push("add_scalar", value, Op::AddScalar(a), ng)
    }

    /// `a * s` where `s` is a `1 x 1` node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::shape("scale_by", format!("scalar operand is {:?}", self.shape(s))));
        }
        let sv = self.value(s).item();
        let value = self.value(a).scale(sv);
        let ng = self.needs(a) || self.needs(s);
        self.push("scale_by", value, Op::ScaleBy { a, s }, ng)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push("exp", value, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        let ng = self.needs(a);
        self.push("log", value, Op::Log(a), ng)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::sqrt);
        let ng = self.needs(a);
        self.push("sqrt", value, Op::Sqrt(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push("sigmoid", value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push("tanh", value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push("relu", value, Op::Relu(a), ng)
    }

    /// Row-wise softmax over all columns.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        self.row_softmax_masked(a, None)
    }

    /// Row-wise softmax where `mask[r * cols + c] == false` excludes a slot
    /// (its logit is treated as negative infinity). Every row needs at least one
    /// valid slot.
    pub fn row_softmax_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let av = self.value(a);
        if let Some(m) = mask {
            if m.len() != av.len() {
                return Err(Error::shape("row_softmax_masked", "mask length differs from logits"));
            }
        }
        let cols = av.cols();
        let mut value = Tensor::zeros(av.rows(), cols);
        for r in 0..av.rows() {
            let valid = |c: usize| mask.map_or(true, |m| m[r * cols + c]);
            let row = av.row(r);
            let mut mx = f64::NEG_INFINITY;
            for (c, &x) in row.iter().enumerate() {
                if valid(c) && x > mx {
                    mx = x;
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(Error::shape("row_softmax_masked", format!("row {r} has no valid slot")));
            }
            let out = value.row_mut(r);
            let mut z = 0.0;
            for (c, &x) in row.iter().enumerate() {
                if valid(c) {
                    let e = (x - mx).exp();
                    out[c] = e;
                    z += e;
                }
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        let ng = self.needs(a);
        self.push("row_softmax", value, Op::Softmax(a), ng)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols() as f64;
        let mut value = av.clone();
        let mut inv_std = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let row = value.row_mut(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c;
            let is = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let ng = self.needs(a);
        self.push("layer_norm", value, Op::LayerNorm { a, inv_std }, ng)
    }

    /// `out[r] = a[idx[r]]`
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::shape("gather_rows", format!("index {bad} >= {}", av.rows())));
        }
        let value = av.select_rows(&idx);
        let ng = self.needs(a);
        self.push("gather_rows", value, Op::Gather { a, idx }, ng)
    }

    /// `out[idx[r]] += a[r]` into `out_rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, out_rows: usize) -> Result<Var> {
        let av = self.value(a);
        if idx.len() != av.rows() {
            return Err(Error::shape("scatter_add_rows", "index count differs from row count"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(Error::shape("scatter_add_rows", format!("index {bad} >= {out_rows}")));
        }
        let mut value = Tensor::zeros(out_rows, av.cols());
        for (r, &i) in idx.iter().enumerate() {
            for (o, x) in value.row_mut(i).iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let ng = self.needs(a);
        self.push("scatter_add_rows", value, Op::ScatterAdd { a, idx }, ng)
    }

    /// Row-wise cosine similarity (`n x 1`); rows with zero norm give 0.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("cosine_rows", self.value(a), self.value(b))?;
        let value = cosine_rows(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push("cosine_rows", value, Op::CosineRows { a, b }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push("sum", value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let value = Tensor::scalar(av.sum() / av.len() as f64);
        let ng = self.needs(a);
        self.push("mean", value, Op::Mean(a), ng)
    }

    pub fn frobenius_norm_sq(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).frobenius_sq());
        let ng = self.needs(a);
        self.push("frobenius_norm_sq", value, Op::FrobSq(a), ng)
    }

    /// Row sums as an `n x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let value = Tensor::column((0..av.rows()).map(|r| av.row(r).iter().sum()).collect());
        let ng = self.needs(a);
        self.push("row_sum", value, Op::RowSum(a), ng)
    }

    /// Solves `A x = b` for symmetric positive definite `A` (`k x k`), `b` is `k x c`.
    ///
    /// Positive definiteness is verified by a Cholesky factorization of the
    /// symmetric part; the solve itself uses LU on `A` as given so that the
    /// backward pass is the general `grad_b = A^-T g`, `grad_A = -grad_b x^T`.
    pub fn linear_solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != av.cols() || bv.rows() != av.rows() {
            return Err(Error::shape(
                "linear_solve",
                format!("A {:?}, b {:?}", av.shape(), bv.shape()),
            ));
        }
        let am = tensor_to_dmatrix(av);
        let sym = (&am + am.transpose()) * 0.5;
        if Cholesky::new(sym).is_none() {
            return Err(Error::NotSpd("linear_solve"));
        }
        let x = LU::new(am)
            .solve(&tensor_to_dmatrix(bv))
            .ok_or(Error::NotSpd("linear_solve"))?;
        let value = dmatrix_to_tensor(&x);
        let ng = self.needs(a) || self.needs(b);
        self.push("linear_solve", value, Op::LinearSolve { a, b }, ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        let ng = self.needs(a);
        self.push("transpose", value, Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).clone().reshaped(rows, cols)?;
        let ng = self.needs(a);
        self.push("reshape", value, Op::Reshape(a), ng)
    }

    /// Stacks nodes with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.shape(p).1,
            None => return Err(Error::shape("concat_rows", "no inputs")),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(Error::shape("concat_rows", format!("{} vs {cols} columns", pv.cols())));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {}", av.cols())));
        }
        let value = Tensor::from_fn(av.rows(), len, |r, c| av.get(r, start + c));
        let ng = self.needs(a);
        self.push("slice_cols", value, Op::SliceCols { a, start }, ng)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", format!("loss has shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Const => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.needs(a) {
                    let ga = if ta { gemm(bv, tb, g, true)? } else { gemm(g, false, bv, !tb)? };
                    acc(a, ga);
                }
                if self.needs(b) {
                    let gb = if tb { gemm(g, true, av, ta)? } else { gemm(av, !ta, g, false)? };
                    acc(b, gb);
                }
            }
            Op::SpMatMul { m, a } => {
                if self.needs(*a) {
                    acc(*a, m.mul_dense_transposed(g)?);
                }
            }
            &Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            &Op::Sub(a, b) => {
                acc(a, g.clone());
                acc(b, g.scale(-1.0));
            }
            &Op::Mul(a, b) => {
                acc(a, g.zip_map(self.value(b), |x, y| x * y));
                acc(b, g.zip_map(self.value(a), |x, y| x * y));
            }
            &Op::AddRow { a, row } => {
                acc(a, g.clone());
                acc(row, col_sums(g));
            }
            &Op::MulRow { a, row } => {
                let (av, rv) = (self.value(a), self.value(row));
                if self.needs(a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        for (o, s) in ga.row_mut(r).iter_mut().zip(rv.data()) {
                            *o *= s;
                        }
                    }
                    acc(a, ga);
                }
                if self.needs(row) {
                    acc(row, col_sums(&g.zip_map(av, |x, y| x * y)));
                }
            }
            &Op::MulCol { a, col } => {
                let (av, cv) = (self.value(a), self.value(col));
                if self.needs(a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = cv.data()[r];
                        for o in ga.row_mut(r) {
                            *o *= s;
                        }
                    }
                    acc(a, ga);
                }
                if self.needs(col) {
                    let gc = (0..g.rows()).map(|r| dot(g.row(r), av.row(r))).collect();
                    acc(col, Tensor::column(gc));
                }
            }
            &Op::Scale { a, s } => acc(a, g.scale(s)),
            &Op::AddScalar(a) => acc(a, g.clone()),
            &Op::ScaleBy { a, s } => {
                let sv = self.value(s).item();
                acc(a, g.scale(sv));
                if self.needs(s) {
                    acc(s, Tensor::scalar(dot(g.data(), self.value(a).data())));
                }
            }
            &Op::Exp(a) => acc(a, g.zip_map(y, |g, y| g * y)),
            &Op::Log(a) => acc(a, g.zip_map(self.value(a), |g, x| g / x)),
            &Op::Sqrt(a) => acc(a, g.zip_map(y, |g, y| g / (2.0 * y))),
            &Op::Sigmoid(a) => acc(a, g.zip_map(y, |g, y| g * y * (1.0 - y))),
            &Op::Tanh(a) => acc(a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
            &Op::Relu(a) => acc(a, g.zip_map(self.value(a), |g, x| if x > 0.0 { g } else { 0.0 })),
            &Op::Softmax(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s = dot(yr, gr);
                    for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - s);
                    }
                }
                acc(a, ga);
            }
            Op::LayerNorm { a, inv_std } => {
                let c = y.cols() as f64;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let mg = gr.iter().sum::<f64>() / c;
                    let mgy = dot(gr, yr) / c;
                    for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = inv_std[r] * (gv - mg - yv * mgy);
                    }
                }
                acc(*a, ga);
            }
            Op::Gather { a, idx } => {
                let (rows, cols) = self.shape(*a);
                let mut ga = Tensor::zeros(rows, cols);
                for (r, &i) in idx.iter().enumerate() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(*a, ga);
            }
            Op::ScatterAdd { a, idx } => acc(*a, g.select_rows(idx)),
            &Op::CosineRows { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let mut gb = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let (ar, br) = (av.row(r), bv.row(r));
                    let na = dot(ar, ar).sqrt();
                    let nb = dot(br, br).sqrt();
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    let c = y.data()[r];
                    let gr = g.data()[r];
                    for (j, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = gr * (br[j] / (na * nb) - c * ar[j] / (na * na));
                    }
                    for (j, o) in gb.row_mut(r).iter_mut().enumerate() {
                        *o = gr * (ar[j] / (na * nb) - c * br[j] / (nb * nb));
                    }
                }
                acc(a, ga);
                acc(b, gb);
            }
            &Op::Sum(a) => {
                let (r, c) = self.shape(a);
                acc(a, Tensor::filled(r, c, g.item()));
            }
            &Op::Mean(a) => {
                let (r, c) = self.shape(a);
                acc(a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            &Op::FrobSq(a) => acc(a, self.value(a).scale(2.0 * g.item())),
            &Op::RowSum(a) => {
                let (r, c) = self.shape(a);
                acc(a, Tensor::from_fn(r, c, |i, _| g.data()[i]));
            }
            &Op::LinearSolve { a, b } => {
                let am = tensor_to_dmatrix(self.value(a));
                let gb = LU::new(am.transpose())
                    .solve(&tensor_to_dmatrix(g))
                    .ok_or(Error::NotSpd("linear_solve backward"))?;
                let gb = dmatrix_to_tensor(&gb);
                if self.needs(a) {
                    acc(a, gemm(&gb, false, y, true)?.scale(-1.0));
                }
                acc(b, gb);
            }
            &Op::Transpose(a) => acc(a, g.transpose()),
            &Op::Reshape(a) => {
                let (r, c) = self.shape(a);
                acc(a, g.clone().reshaped(r, c)?);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    acc(p, Tensor::from_vec(rows, cols, slice)?);
                    offset += rows;
                }
            }
            &Op::SliceCols { a, start } => {
                let (rows, cols) = self.shape(a);
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(a, ga);
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

/// Row-wise cosine similarity of two equally shaped tensors as an `n x 1` column.
pub fn cosine_rows(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::column(
        (0..a.rows())
            .map(|r| {
                let (ar, br) = (a.row(r), b.row(r));
                let na = dot(ar, ar).sqrt();
                let nb = dot(br, br).sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot(ar, br) / (na * nb)
                }
            })
            .collect(),
    )
}
