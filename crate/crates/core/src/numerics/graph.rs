//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. `backward` walks
//! the tape in reverse and accumulates vector-Jacobian products into the nodes
//! that require gradients. Only nodes reachable from a gradient-requiring leaf
//! carry gradients; constants are skipped.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Smooth elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Softplus,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "silu" => Some(Activation::Silu),
            "softplus" => Some(Activation::Softplus),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Softplus => softplus(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Softplus => sigmoid(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Square(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    TileCols(Var, usize),
    NormalizeRows(Var),
    RowDot(Var, Var),
    LogSoftmaxRows(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Act(..) => "activation",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::ConcatCols(..) => "concat_cols",
            Op::TileCols(..) => "tile_cols",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::RowDot(..) => "row_dot",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// The gradient for `v`, or zeros shaped like `like` when `v` did not
    /// influence the output.
    pub fn take_or_zeros(&mut self, v: Var, like: &[usize]) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(like))
    }
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> Error {
    Error::Shape {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
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

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                at: format!("node {} ({})", self.nodes.len(), op.name()),
            });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `[n, k] x [k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a)?;
        let (k2, m) = self.dims2(b)?;
        if k != k2 {
            return Err(shape_err("matmul", &[k, m], &[k2, m]));
        }
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            1.0,
            (self.value(a).data(), k as isize, 1),
            (self.value(b).data(), m as isize, 1),
            0.0,
            &mut out,
        );
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// `[n, k] x [m, k]^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a)?;
        let (m, k2) = self.dims2(b)?;
        if k != k2 {
            return Err(shape_err("matmul_bt", &[m, k], &[m, k2]));
        }
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            1.0,
            (self.value(a).data(), k as isize, 1),
            (self.value(b).data(), 1, k as isize),
            0.0,
            &mut out,
        );
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMulBt(a, b), &[a, b])
    }

    /// Adds a `[m]` bias to every row of `[n, m]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.dims2(a)?;
        if self.shape(bias) != [m] {
            return Err(shape_err("add_bias", &[m], self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.push(Tensor::new(vec![n, m], out)?, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let out = self.value(a).map(|x| act.apply(x));
        self.push(out, Op::Act(a, act), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Concatenates `[n, k_i]` tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of nothing".into()));
        }
        let n = self.dims2(parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if r != n {
                return Err(shape_err("concat_cols", &[n, c], &[r, c]));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::new(vec![n, total], out)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Repeats `[n, k]` side by side `reps` times, giving `[n, k * reps]`.
    pub fn tile_cols(&mut self, a: Var, reps: usize) -> Result<Var> {
        let (n, k) = self.dims2(a)?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * k * reps);
        for row in src.chunks(k.max(1)).take(n) {
            for _ in 0..reps {
                out.extend_from_slice(row);
            }
        }
        self.push(Tensor::new(vec![n, k * reps], out)?, Op::TileCols(a, reps), &[a])
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.dims2(a)?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(d.max(1)).take(n) {
            let r = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            for v in row.iter_mut() {
                *v /= r;
            }
        }
        self.push(Tensor::new(vec![n, d], out)?, Op::NormalizeRows(a), &[a])
    }

    /// Row-wise dot product of two `[n, d]` tensors, giving `[n, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.dims2(a)?;
        if self.shape(b) != [n, d] {
            return Err(shape_err("row_dot", &[n, d], self.shape(b)));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = (0..n)
            .map(|i| {
                av[i * d..(i + 1) * d]
                    .iter()
                    .zip(&bv[i * d..(i + 1) * d])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        self.push(Tensor::new(vec![n, 1], out)?, Op::RowDot(a, b), &[a, b])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (n, k) = self.dims2(a)?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(k.max(1)).take(n) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(Tensor::new(vec![n, k], out)?, Op::LogSoftmaxRows(a), &[a])
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let out_val = self.value(out);
        if !out_val.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Tensor::full(out_val.shape(), 1.0));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.dims2(*a)?;
                let m = self.dims2(*b)?.1;
                if needs(*a) {
                    // dA = dC · B^T
                    let mut da = vec![0.0; n * k];
                    gemm(
                        n,
                        m,
                        k,
                        1.0,
                        (g.data(), m as isize, 1),
                        (self.value(*b).data(), 1, m as isize),
                        0.0,
                        &mut da,
                    );
                    accumulate(grads, *a, Tensor::new(vec![n, k], da)?);
                }
                if needs(*b) {
                    // dB = A^T · dC
                    let mut db = vec![0.0; k * m];
                    gemm(
                        k,
                        n,
                        m,
                        1.0,
                        (self.value(*a).data(), 1, k as isize),
                        (g.data(), m as isize, 1),
                        0.0,
                        &mut db,
                    );
                    accumulate(grads, *b, Tensor::new(vec![k, m], db)?);
                }
            }
            Op::MatMulBt(a, b) => {
                let (n, k) = self.dims2(*a)?;
                let m = self.dims2(*b)?.0;
                if needs(*a) {
                    // dA = dC · B
                    let mut da = vec![0.0; n * k];
                    gemm(
                        n,
                        m,
                        k,
                        1.0,
                        (g.data(), m as isize, 1),
                        (self.value(*b).data(), k as isize, 1),
                        0.0,
                        &mut da,
                    );
                    accumulate(grads, *a, Tensor::new(vec![n, k], da)?);
                }
                if needs(*b) {
                    // dB = dC^T · A
                    let mut db = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        (g.data(), 1, m as isize),
                        (self.value(*a).data(), k as isize, 1),
                        0.0,
                        &mut db,
                    );
                    accumulate(grads, *b, Tensor::new(vec![m, k], db)?);
                }
            }
            Op::AddBias(a, bias) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*bias) {
                    let (_, m) = g.dims2()?;
                    let mut db = vec![0.0; m];
                    for row in g.data().chunks(m.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *bias, Tensor::vector(db));
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if needs(*b) {
                    accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    let c = *c;
                    accumulate(grads, *a, g.map(|v| v * c));
                }
            }
            Op::Act(a, act) => {
                if needs(*a) {
                    let act = *act;
                    let d = g.zip_map(self.value(*a), |gv, x| gv * act.derivative(x))?;
                    accumulate(grads, *a, d);
                }
            }
            Op::Square(a) => {
                if needs(*a) {
                    accumulate(grads, *a, g.zip_map(self.value(*a), |gv, x| 2.0 * x * gv)?);
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    accumulate(grads, *a, Tensor::full(self.shape(*a), g.item()));
                }
            }
            Op::Mean(a) => {
                if needs(*a) {
                    let n = self.value(*a).len() as f64;
                    accumulate(grads, *a, Tensor::full(self.shape(*a), g.item() / n));
                }
            }
            Op::ConcatCols(parts) => {
                let (n, total) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims2(p)?.1;
                    if needs(p) {
                        let mut dp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            let start = i * total + offset;
                            dp.extend_from_slice(&g.data()[start..start + w]);
                        }
                        accumulate(grads, p, Tensor::new(vec![n, w], dp)?);
                    }
                    offset += w;
                }
            }
            Op::TileCols(a, reps) => {
                if needs(*a) {
                    let (n, k) = self.dims2(*a)?;
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        for r in 0..*reps {
                            let src = &g.data()[i * k * reps + r * k..i * k * reps + (r + 1) * k];
                            for (d, v) in da[i * k..(i + 1) * k].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                    accumulate(grads, *a, Tensor::new(vec![n, k], da)?);
                }
            }
            Op::NormalizeRows(a) => {
                if needs(*a) {
                    let (n, d) = self.dims2(*a)?;
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let mut da = vec![0.0; n * d];
                    for i in 0..n {
                        let xr = &x[i * d..(i + 1) * d];
                        let yr = &y[i * d..(i + 1) * d];
                        let gr = &g.data()[i * d..(i + 1) * d];
                        let r = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if r <= NORM_FLOOR {
                            for (o, gv) in da[i * d..(i + 1) * d].iter_mut().zip(gr) {
                                *o = gv / NORM_FLOOR;
                            }
                            continue;
                        }
                        let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            da[i * d + j] = (gr[j] - yr[j] * yg) / r;
                        }
                    }
                    accumulate(grads, *a, Tensor::new(vec![n, d], da)?);
                }
            }
            Op::RowDot(a, b) => {
                let (n, d) = self.dims2(*a)?;
                let scale_rows = |src: &Tensor| -> Result<Tensor> {
                    let mut out = src.data().to_vec();
                    for i in 0..n {
                        let gi = g.data()[i];
                        for v in &mut out[i * d..(i + 1) * d] {
                            *v *= gi;
                        }
                    }
                    Tensor::new(vec![n, d], out)
                };
                if needs(*a) {
                    accumulate(grads, *a, scale_rows(self.value(*b))?);
                }
                if needs(*b) {
                    accumulate(grads, *b, scale_rows(self.value(*a))?);
                }
            }
            Op::LogSoftmaxRows(a) => {
                if needs(*a) {
                    let (n, k) = self.dims2(*a)?;
                    let y = node.value.data();
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let gr = &g.data()[i * k..(i + 1) * k];
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..k {
                            da[i * k + j] = gr[j] - y[i * k + j].exp() * gsum;
                        }
                    }
                    accumulate(grads, *a, Tensor::new(vec![n, k], da)?);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of one row of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::central_difference;

    fn t2(r: usize, c: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![r, c], data.to_vec()).unwrap()
    }

    /// Compares tape gradients of a scalar function of one matrix input with
    /// central differences.
    fn check(build: impl Fn(&mut Graph, Var) -> Var, x: Tensor) {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = build(&mut g, xv);
        let grads = g.backward(out).unwrap();
        let analytic = grads.get(xv).unwrap().clone();
        let numeric = central_difference(
            |p| {
                let mut g = Graph::new();
                let xv = g.input(Tensor::new(x.shape().to_vec(), p.to_vec()).unwrap());
                let o = build(&mut g, xv);
                g.value(o).item()
            },
            x.data(),
            1e-5,
        );
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let sq = g.square(x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let sq = g.square(x).unwrap();
        assert!(matches!(g.backward(sq), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_names_the_node() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1e300]));
        let err = g.square(x).unwrap_err();
        match err {
            Error::NonFinite { at } => assert!(at.contains("square"), "{at}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let w = t2(3, 2, &[0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        check(
            |g, x| {
                let wv = g.constant(w.clone());
                let b = g.constant(Tensor::vector(vec![0.1, -0.3]));
                let y = g.matmul(x, wv).unwrap();
                let y = g.add_bias(y, b).unwrap();
                let y = g.activation(y, Activation::Silu).unwrap();
                let y = g.square(y).unwrap();
                g.sum(y).unwrap()
            },
            t2(2, 3, &[0.2, -1.0, 0.4, 1.5, 0.3, -0.6]),
        );
    }

    #[test]
    fn matmul_weight_gradient() {
        let x = t2(2, 3, &[0.2, -1.0, 0.4, 1.5, 0.3, -0.6]);
        check(
            |g, w| {
                let xv = g.constant(x.clone());
                let y = g.matmul(xv, w).unwrap();
                let y = g.activation(y, Activation::Tanh).unwrap();
                g.sum(y).unwrap()
            },
            t2(3, 2, &[0.3, -0.2, 0.5, 0.1, -0.4, 0.7]),
        );
        check(
            |g, w| {
                let xv = g.constant(x.clone());
                let y = g.matmul_bt(xv, w).unwrap();
                let y = g.activation(y, Activation::Softplus).unwrap();
                g.mean(y).unwrap()
            },
            t2(4, 3, &[0.3, -0.2, 0.5, 0.1, -0.4, 0.7, 0.9, 0.0, -0.1, 0.2, 0.2, 0.3]),
        );
    }

    #[test]
    fn normalize_dot_softmax_gradients() {
        let other = t2(2, 3, &[0.5, 0.1, -0.3, -0.2, 0.8, 0.4]);
        check(
            |g, x| {
                let o = g.constant(other.clone());
                let n = g.normalize_rows(x).unwrap();
                let d1 = g.row_dot(n, o).unwrap();
                let t = g.tile_cols(x, 2).unwrap();
                let t = g.normalize_rows(t).unwrap();
                let d2 = g.row_dot(t, t).unwrap();
                let c = g.concat_cols(&[d1, d2, x]).unwrap();
                let ls = g.log_softmax_rows(c).unwrap();
                let w = g.constant(Tensor::full(&[2, 5], 0.3));
                let p = g.mul(ls, w).unwrap();
                let s = g.sub(p, c).unwrap();
                let s = g.scale(s, 0.7).unwrap();
                g.sum(s).unwrap()
            },
            t2(2, 3, &[0.2, -1.0, 0.4, 1.5, 0.3, -0.6]),
        );
    }

    #[test]
    fn constant_loss_has_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let c = g.constant(Tensor::scalar(3.0));
        let s = g.sum(c).unwrap();
        let mut grads = g.backward(s).unwrap();
        assert_eq!(grads.take_or_zeros(x, &[2]).data(), &[0.0, 0.0]);
    }
}
