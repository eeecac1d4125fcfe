//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Nodes are
//! appended in evaluation order, so each node's inputs always precede it and
//! [`Tape::backward`] can sweep the record once in reverse.
//!
//! Leaves come in two kinds: [`Tape::param`] for trainable parameters, whose
//! adjoints are always produced (zero if the loss does not depend on them), and
//! [`Tape::constant`] for data that needs no gradient. [`Tape::leaf`] is a
//! differentiable input that is not a parameter, used by gradient checks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, dim_err, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddColBias { x: Var, bias: Var },
    ScaleRows { x: Var, scale: Var },
    AddScalar(Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    SoftmaxCols(Var),
    Transpose(Var),
    RowNorms(Var),
    ColNorms(Var),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Sum(Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Adjoints produced by one call to [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Parameter leaves in registration order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.params.push(v);
        v
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)`, transposing either operand without materialising it.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let out = gemm(self.value(a), ta, self.value(b), tb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), name, f)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// `x[i, j] + bias[i]` for an `m × b` matrix and an `m`-vector.
    pub fn add_col_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, b) = xv.require_matrix("add_col_bias")?;
        let bv = self.value(bias);
        if bv.numel() != m || bv.cols() != 1 {
            return dim_err("add_col_bias", xv.shape(), bv.shape());
        }
        let mut out = xv.data().to_vec();
        for (row, &bi) in out.chunks_mut(b).zip(bv.data()) {
            row.iter_mut().for_each(|v| *v += bi);
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::from_parts(vec![m, b], out), Op::AddColBias { x, bias }, rg))
    }

    /// `x[i, j] * scale[i]` for an `m × b` matrix and an `m`-vector.
    pub fn scale_rows(&mut self, x: Var, scale: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, b) = xv.require_matrix("scale_rows")?;
        let sv = self.value(scale);
        if sv.numel() != m || sv.cols() != 1 {
            return dim_err("scale_rows", xv.shape(), sv.shape());
        }
        let mut out = xv.data().to_vec();
        for (row, &si) in out.chunks_mut(b).zip(sv.data()) {
            row.iter_mut().for_each(|v| *v *= si);
        }
        let rg = self.rg(&[x, scale]);
        Ok(self.push(Tensor::from_parts(vec![m, b], out), Op::ScaleRows { x, scale }, rg))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn softmax_cols(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_cols()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SoftmaxCols(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Euclidean norm of each row, as an `m × 1` column.
    pub fn row_norms(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, b) = av.require_matrix("row_norms")?;
        let out = av
            .data()
            .chunks(b)
            .map(|row| libm::sqrt(row.iter().map(|x| x * x).sum()))
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![m, 1], out), Op::RowNorms(a), rg))
    }

    /// Euclidean norm of each column, as a `1 × b` row.
    pub fn col_norms(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, b) = av.require_matrix("col_norms")?;
        let mut sq = vec![0.0; b];
        for i in 0..m {
            for (s, x) in sq.iter_mut().zip(&av.data()[i * b..(i + 1) * b]) {
                *s += x * x;
            }
        }
        let out = sq.into_iter().map(libm::sqrt).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_parts(vec![1, b], out), Op::ColNorms(a), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_rows(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_rows(start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// `sum(a ⊙ w)` with `w` a fixed weighting; used to reduce a tensor-valued
    /// output to a scalar whose gradient is not degenerate.
    pub fn weighted_sum(&mut self, a: Var, w: Tensor) -> Result<Var> {
        let w = self.constant(w);
        let p = self.mul(a, w)?;
        Ok(self.sum(p))
    }

    /// Mean squared error `(1 / n) Σ (a − b)²`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).sub(self.value(b)).map_err(|_| crate::Error::Dimension {
            op: "mse",
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        })?;
        let n = d.numel() as f64;
        let out = Tensor::scalar(d.data().iter().map(|x| x * x).sum::<f64>() / n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mse(a, b), rg))
    }

    /// Propagates adjoints from a scalar `loss` back to every node. Each call
    /// starts from fresh zero adjoints.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return contract("backward: loss must be a scalar");
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for &p in &self.params {
            if grads[p.0].is_none() {
                grads[p.0] = Some(Tensor::zeros(self.value(p).shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.data_mut().iter_mut().zip(contrib.data()).for_each(|(a, b)| *a += b),
            slot => {
                // Contributions carry the producer's view of the shape (e.g. a
                // bias gradient is computed as m × 1); store the leaf's own.
                let shape = self.value(v).shape().to_vec();
                *slot = Some(Tensor::from_parts(shape, contrib.into_data()));
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.nodes[idx].value;
        match self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.needs(a) {
                    let ga = if ta { gemm(bv, tb, g, true)? } else { gemm(g, false, bv, !tb)? };
                    self.accum(grads, a, ga);
                }
                if self.needs(b) {
                    let gb = if tb { gemm(g, true, av, ta)? } else { gemm(av, !ta, g, false)? };
                    self.accum(grads, b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, a, g.clone());
                self.accum(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, a, g.clone());
                self.accum(grads, b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    self.accum(grads, a, g.zip_map(self.value(b), "mul", |g, y| g * y)?);
                }
                if self.needs(b) {
                    self.accum(grads, b, g.zip_map(self.value(a), "mul", |g, x| g * x)?);
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(b);
                if self.needs(a) {
                    self.accum(grads, a, g.zip_map(bv, "div", |g, y| g / y)?);
                }
                if self.needs(b) {
                    let q = g.zip_map(out, "div", |g, o| g * o)?;
                    self.accum(grads, b, q.zip_map(bv, "div", |t, y| -t / y)?);
                }
            }
            Op::AddColBias { x, bias } => {
                self.accum(grads, x, g.clone());
                if self.needs(bias) {
                    let cols = g.cols();
                    let gb = g.data().chunks(cols).map(|r| r.iter().sum()).collect();
                    self.accum(grads, bias, Tensor::from_parts(vec![g.rows()], gb));
                }
            }
            Op::ScaleRows { x, scale } => {
                let cols = g.cols();
                if self.needs(x) {
                    let sv = self.value(scale).data();
                    let mut gx = g.data().to_vec();
                    for (row, &s) in gx.chunks_mut(cols).zip(sv) {
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    self.accum(grads, x, Tensor::from_parts(g.shape().to_vec(), gx));
                }
                if self.needs(scale) {
                    let xv = self.value(x).data();
                    let gs = g
                        .data()
                        .chunks(cols)
                        .zip(xv.chunks(cols))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accum(grads, scale, Tensor::from_parts(vec![g.rows()], gs));
                }
            }
            Op::AddScalar(a) => self.accum(grads, a, g.clone()),
            Op::Scale(a, c) => self.accum(grads, a, g.scale(c)),
            Op::Tanh(a) => self.accum(grads, a, g.zip_map(out, "tanh", |g, y| g * (1.0 - y * y))?),
            Op::Relu(a) => {
                let gx = g.zip_map(self.value(a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?;
                self.accum(grads, a, gx);
            }
            Op::SoftmaxCols(a) => {
                let (r, c) = out.require_matrix("softmax_cols")?;
                let (y, gd) = (out.data(), g.data());
                let mut gx = vec![0.0; r * c];
                for j in 0..c {
                    let dot: f64 = (0..r).map(|i| gd[i * c + j] * y[i * c + j]).sum();
                    for i in 0..r {
                        gx[i * c + j] = y[i * c + j] * (gd[i * c + j] - dot);
                    }
                }
                self.accum(grads, a, Tensor::from_parts(vec![r, c], gx));
            }
            Op::Transpose(a) => self.accum(grads, a, g.transpose()?),
            Op::RowNorms(a) => {
                let av = self.value(a);
                let cols = av.cols();
                let mut gx = av.data().to_vec();
                for (i, row) in gx.chunks_mut(cols).enumerate() {
                    let n = out.data()[i];
                    let s = if n > 0.0 { g.data()[i] / n } else { 0.0 };
                    row.iter_mut().for_each(|v| *v *= s);
                }
                self.accum(grads, a, Tensor::from_parts(av.shape().to_vec(), gx));
            }
            Op::ColNorms(a) => {
                let av = self.value(a);
                let cols = av.cols();
                let scale: Vec<f64> = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&n, &gj)| if n > 0.0 { gj / n } else { 0.0 })
                    .collect();
                let mut gx = av.data().to_vec();
                for row in gx.chunks_mut(cols) {
                    row.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
                }
                self.accum(grads, a, Tensor::from_parts(av.shape().to_vec(), gx));
            }
            Op::ConcatRows(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.needs(p) {
                        self.accum(grads, p, g.slice_rows(start, rows)?);
                    }
                    start += rows;
                }
            }
            Op::SliceRows { x, start } => {
                if self.needs(x) {
                    let xv = self.value(x);
                    let cols = xv.cols();
                    let mut gx = vec![0.0; xv.numel()];
                    gx[start * cols..start * cols + g.numel()].copy_from_slice(g.data());
                    self.accum(grads, x, Tensor::from_parts(xv.shape().to_vec(), gx));
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                self.accum(grads, a, Tensor::full(self.value(a).shape(), s));
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let k = 2.0 * g.data()[0] / av.numel() as f64;
                let ga = av.zip_map(bv, "mse", |x, y| k * (x - y))?;
                if self.needs(b) {
                    self.accum(grads, b, ga.scale(-1.0));
                }
                self.accum(grads, a, ga);
            }
        }
        Ok(())
    }
}
