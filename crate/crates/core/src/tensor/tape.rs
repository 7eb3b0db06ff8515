//! Reverse-mode differentiation over matrix-valued operations.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its operands. [`Tape::backward`] walks the nodes in reverse insertion
//! order and accumulates adjoints, so gradients are deterministic for a
//! given sequence of calls.

use crate::error::{Error, Result};
use crate::tensor::matrix::{layer_norm_forward, softmax_rows, Matrix};
use crate::tensor::Activation;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Activation(Var, Activation),
    Softmax(Var),
    LayerNorm { input: Var, gain: Var, offset: Var, normalized: Matrix, inv_std: Vec<f64> },
    SliceCols { input: Var, start: usize },
    SliceRows { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Unfold { input: Var, width: usize, stride: usize },
    Sum(Var),
    SumSquares(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input (parameter or probed input).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Copies the value of `v` into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`, used for query-key scores.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::dims("matmul_nt", av.shape(), bv.shape()));
        }
        let mut out = Matrix::zeros(av.rows(), bv.rows());
        for i in 0..av.rows() {
            let ar = av.row(i);
            for j in 0..bv.rows() {
                let br = bv.row(j);
                let mut s = 0.0;
                for (x, y) in ar.iter().zip(br) {
                    s += x * y;
                }
                out.set(i, j, s);
            }
        }
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Adds the single-row `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::dims("add_row", xv.shape(), rv.shape()));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(rv.as_slice()) {
                *o += b;
            }
        }
        let rg = self.grad_of(&[x, row]);
        Ok(self.push(value, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.grad_of(&[x]);
        self.push(value, Op::Scale(x, s), rg)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let value = self.value(x).map(|v| act.apply(v));
        let rg = self.grad_of(&[x]);
        self.push(value, Op::Activation(x, act), rg)
    }

    /// Row softmax of `x + bias`. The bias is the only place a `-inf`
    /// entry may enter the computation; `x` itself must be finite.
    pub fn softmax_rows(&mut self, x: Var, bias: Option<&Matrix>) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_finite() {
            return Err(Error::NonFinite("softmax input"));
        }
        let value = match bias {
            Some(b) => {
                if b.shape() != xv.shape() {
                    return Err(Error::dims("softmax bias", xv.shape(), b.shape()));
                }
                let mut scores = xv.clone();
                for (s, &bv) in scores.as_mut_slice().iter_mut().zip(b.as_slice()) {
                    *s += bv;
                }
                softmax_rows(&scores)?
            }
            None => softmax_rows(xv)?,
        };
        let rg = self.grad_of(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var, eps: f64) -> Result<Var> {
        let (value, cache) =
            layer_norm_forward(self.value(x), self.value(gain), self.value(offset), eps)?;
        let rg = self.grad_of(&[x, gain, offset]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: x,
                gain,
                offset,
                normalized: cache.normalized,
                inv_std: cache.inv_std,
            },
            rg,
        ))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::dims("slice_cols", xv.shape(), (start, len)));
        }
        let value = xv.slice_cols(start, len);
        let rg = self.grad_of(&[x]);
        Ok(self.push(value, Op::SliceCols { input: x, start }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(Error::dims("slice_rows", xv.shape(), (start, len)));
        }
        let value = xv.slice_rows(start, len);
        let rg = self.grad_of(&[x]);
        Ok(self.push(value, Op::SliceRows { input: x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::concat_cols(&mats)?;
        let rg = self.grad_of(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::concat_rows(&mats)?;
        let rg = self.grad_of(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Gathers strided time windows: output row `t` is the concatenation of
    /// input rows `t*stride .. t*stride + width`.
    pub fn unfold(&mut self, x: Var, width: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        if width == 0 || stride == 0 {
            return Err(Error::Contract(format!(
                "kernel width ({width}) and stride ({stride}) must be positive"
            )));
        }
        if xv.rows() < width {
            return Err(Error::TooShort { len: xv.rows(), width });
        }
        let c = xv.cols();
        let out_len = (xv.rows() - width) / stride + 1;
        let mut value = Matrix::zeros(out_len, width * c);
        for t in 0..out_len {
            let dst = value.row_mut(t);
            for w in 0..width {
                dst[w * c..(w + 1) * c].copy_from_slice(xv.row(t * stride + w));
            }
        }
        let rg = self.grad_of(&[x]);
        Ok(self.push(value, Op::Unfold { input: x, width, stride }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(x).sum());
        let rg = self.grad_of(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(x).sum_squares());
        let rg = self.grad_of(&[x]);
        self.push(value, Op::SumSquares(x), rg)
    }

    /// Propagates adjoints from the scalar `loss` back to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (a, b) in existing.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    acc(*a, g.matmul(&bv.transpose()).expect("matmul grad"));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, av.transpose().matmul(g).expect("matmul grad"));
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    acc(*a, g.matmul(bv).expect("matmul_nt grad"));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, g.transpose().matmul(av).expect("matmul_nt grad"));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                let mut rg = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &v) in rg.as_mut_slice().iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*row, rg);
            }
            Op::Scale(x, s) => acc(*x, g.scale(*s)),
            Op::Activation(x, act) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                    *d *= act.derivative(v);
                }
                acc(*x, dx);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                        *d = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm { input, gain, offset, normalized, inv_std } => {
                let gv = self.value(*gain);
                let (rows, cols) = g.shape();
                let n = cols as f64;
                let mut dgain = Matrix::zeros(1, cols);
                let mut doffset = Matrix::zeros(1, cols);
                let mut dx = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    let (gr, zr) = (g.row(i), normalized.row(i));
                    let mut mean_dz = 0.0;
                    let mut mean_dz_z = 0.0;
                    for j in 0..cols {
                        let dz = gr[j] * gv.as_slice()[j];
                        mean_dz += dz;
                        mean_dz_z += dz * zr[j];
                        dgain.as_mut_slice()[j] += gr[j] * zr[j];
                        doffset.as_mut_slice()[j] += gr[j];
                    }
                    mean_dz /= n;
                    mean_dz_z /= n;
                    let s = inv_std[i];
                    for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                        let dz = gr[j] * gv.as_slice()[j];
                        *d = s * (dz - mean_dz - zr[j] * mean_dz_z);
                    }
                }
                acc(*input, dx);
                acc(*gain, dgain);
                acc(*offset, doffset);
            }
            Op::SliceCols { input, start } => {
                let (rows, cols) = self.shape(*input);
                let mut dx = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*input, dx);
            }
            Op::SliceRows { input, start } => {
                let (rows, cols) = self.shape(*input);
                let mut dx = Matrix::zeros(rows, cols);
                for i in 0..g.rows() {
                    dx.row_mut(start + i).copy_from_slice(g.row(i));
                }
                acc(*input, dx);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, g.slice_cols(start, w));
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    acc(p, g.slice_rows(start, h));
                    start += h;
                }
            }
            Op::Unfold { input, width, stride } => {
                let (rows, c) = self.shape(*input);
                let mut dx = Matrix::zeros(rows, c);
                for t in 0..g.rows() {
                    let src = g.row(t);
                    for w in 0..*width {
                        let dst = dx.row_mut(t * stride + w);
                        for (d, &s) in dst.iter_mut().zip(&src[w * c..(w + 1) * c]) {
                            *d += s;
                        }
                    }
                }
                acc(*input, dx);
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::SumSquares(x) => acc(*x, self.value(*x).scale(2.0 * g.get(0, 0))),
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
