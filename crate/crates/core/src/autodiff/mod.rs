//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass in creation order,
//! which is already a topological order. [`Tape::backward`] sweeps the records
//! once in reverse and accumulates gradients into every node that requires
//! them. Gradients accumulate across repeated `backward` calls until
//! [`Tape::zero_grad`] clears them; the trainer builds a fresh tape per step.
//!
//! Convolution is not a primitive: callers lower it to [`Tape::gather`]
//! (patch extraction) followed by [`Tape::matmul`].

mod gradcheck;
mod tensor;

use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

#[allow(unused_imports)] // float math without std
use num_traits::Float;

use crate::error::{Error, Result};

pub use gradcheck::{check_gradients, check_gradients_many};
pub use tensor::Tensor;
use tensor::{matmul_into, matmul_nt_into, matmul_tn_into};

/// Sentinel index for [`Tape::gather`]: the output element is a constant zero.
pub const PAD: usize = usize::MAX;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    AddBias(Var, Var),
    RowSoftmax(Var),
    L2NormalizeRows(Var, f64),
    RowStandardize(Var, f64),
    CrossEntropy(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Dynamic computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable input: gradients are tracked.
    pub fn param(&self, value: &Tensor) -> Var {
        self.leaf(value.clone(), true)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| node.value.with_data(g.clone()))
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = ta.dims2().ok_or_else(|| Error::dim("matmul", ta.shape(), tb.shape()))?;
            let (k2, n) = tb.dims2().ok_or_else(|| Error::dim("matmul", ta.shape(), tb.shape()))?;
            if k != k2 {
                return Err(Error::dim("matmul", ta.shape(), tb.shape()));
            }
            let mut out = vec![0.0; m * n];
            matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
            (
                Tensor::new(vec![m, n], out)?,
                nodes[a.0].requires_grad || nodes[b.0].requires_grad,
            )
        };
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Batched product over the leading axis: `[G,m,k]·[G,k,n]`, or
    /// `[G,m,k]·[G,n,k]ᵀ` when `transpose_b` is set.
    pub fn batch_matmul(&self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (ta.shape(), tb.shape());
            let err = || Error::dim("batch_matmul", sa, sb);
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
                return Err(err());
            }
            let (g, m, k) = (sa[0], sa[1], sa[2]);
            let n = if transpose_b {
                if sb[2] != k {
                    return Err(err());
                }
                sb[1]
            } else {
                if sb[1] != k {
                    return Err(err());
                }
                sb[2]
            };
            let mut out = vec![0.0; g * m * n];
            for gi in 0..g {
                let ab = &ta.data()[gi * m * k..(gi + 1) * m * k];
                let bb = &tb.data()[gi * k * n..(gi + 1) * k * n];
                let ob = &mut out[gi * m * n..(gi + 1) * m * n];
                if transpose_b {
                    matmul_nt_into(ab, bb, ob, m, k, n);
                } else {
                    matmul_into(ab, bb, ob, m, k, n);
                }
            }
            Tensor::new(vec![g, m, n], out)?
        };
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::BatchMatMul { a, b, transpose_b }, rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let nodes = self.nodes.borrow();
        let ta = &nodes[a.0].value;
        ta.map(f)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), self.needs(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), self.needs(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), self.needs(&[a, b])))
    }

    /// `max(x, 0)`; the subgradient at exactly 0 is 0.
    pub fn relu(&self, a: Var) -> Var {
        let v = self.unary(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a), self.needs(&[a]))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.unary(a, sigmoid);
        self.push(v, Op::Sigmoid(a), self.needs(&[a]))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    /// `c·x + offset` with constants `c` and `offset`.
    pub fn affine(&self, a: Var, c: f64, offset: f64) -> Var {
        let v = self.unary(a, |x| c * x + offset);
        self.push(v, Op::Affine(a, c), self.needs(&[a]))
    }

    /// Multiplication by a single-element tensor that may itself be trainable.
    pub fn scale_by(&self, a: Var, s: Var) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let ts = &nodes[s.0].value;
            if ts.len() != 1 {
                return Err(Error::dim("scale_by", nodes[a.0].value.shape(), ts.shape()));
            }
            let c = ts.data()[0];
            let ta = &nodes[a.0].value;
            ta.map(|x| c * x)
        };
        Ok(self.push(v, Op::ScaleBy(a, s), self.needs(&[a, s])))
    }

    /// Adds a length-`n` bias to every row of an `m×n` tensor.
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[bias.0].value);
            let n = *ta.shape().last().unwrap_or(&0);
            if tb.len() != n || ta.shape().len() != 2 {
                return Err(Error::dim("add_bias", ta.shape(), tb.shape()));
            }
            let mut data = ta.data().to_vec();
            for row in data.chunks_mut(n) {
                for (x, b) in row.iter_mut().zip(tb.data()) {
                    *x += b;
                }
            }
            Tensor::new(ta.shape().to_vec(), data)?
        };
        Ok(self.push(v, Op::AddBias(a, bias), self.needs(&[a, bias])))
    }

    // ---- row-wise normalizations -----------------------------------------

    fn rows_of(&self, a: Var, name: &'static str) -> Result<(usize, usize)> {
        let nodes = self.nodes.borrow();
        nodes[a.0]
            .value
            .dims2()
            .ok_or_else(|| Error::dim(name, nodes[a.0].value.shape(), &[]))
    }

    /// Softmax along each row, with max subtraction.
    pub fn row_softmax(&self, a: Var) -> Result<Var> {
        let (_, n) = self.rows_of(a, "row_softmax")?;
        let v = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let mut data = ta.data().to_vec();
            for row in data.chunks_mut(n) {
                softmax_in_place(row);
            }
            Tensor::new(ta.shape().to_vec(), data)?
        };
        Ok(self.push(v, Op::RowSoftmax(a), self.needs(&[a])))
    }

    /// Scales each row to unit Euclidean norm. Rows with norm below `eps`
    /// become zero rows and pass no gradient.
    pub fn l2_normalize_rows(&self, a: Var, eps: f64) -> Result<Var> {
        let (_, n) = self.rows_of(a, "l2_normalize_rows")?;
        let v = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let mut data = ta.data().to_vec();
            for row in data.chunks_mut(n) {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < eps {
                    row.fill(0.0);
                } else {
                    row.iter_mut().for_each(|x| *x /= norm);
                }
            }
            Tensor::new(ta.shape().to_vec(), data)?
        };
        Ok(self.push(v, Op::L2NormalizeRows(a, eps), self.needs(&[a])))
    }

    /// Per-row z-score `(x − mean) / sqrt(var + eps²)` with population variance.
    pub fn row_standardize(&self, a: Var, eps: f64) -> Result<Var> {
        let (_, n) = self.rows_of(a, "row_standardize")?;
        let v = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let mut data = ta.data().to_vec();
            for row in data.chunks_mut(n) {
                let (mean, s) = mean_and_scale(row, eps);
                row.iter_mut().for_each(|x| *x = (*x - mean) / s);
            }
            Tensor::new(ta.shape().to_vec(), data)?
        };
        Ok(self.push(v, Op::RowStandardize(a, eps), self.needs(&[a])))
    }

    // ---- reductions and losses --------------------------------------------

    /// Mean over rows of `−log softmax(logits)[label]`, as a 1-element tensor.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, q) = self.rows_of(logits, "cross_entropy")?;
        if labels.len() != b {
            return Err(Error::dim("cross_entropy", &[b, q], &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= q) {
            return Err(Error::Index { label, classes: q });
        }
        let loss = {
            let nodes = self.nodes.borrow();
            let t = &nodes[logits.0].value;
            let mut total = 0.0;
            for (row, &label) in t.data().chunks(q).zip(labels) {
                total += log_sum_exp(row) - row[label];
            }
            total / b as f64
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, labels.to_vec()),
            self.needs(&[logits]),
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.needs(&[a]))
    }

    pub fn mean(&self, a: Var) -> Var {
        let s = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        self.push(Tensor::scalar(s), Op::Mean(a), self.needs(&[a]))
    }

    // ---- data movement ----------------------------------------------------

    /// `out[i] = a[index[i]]` (flat indices), or 0 where `index[i] == PAD`.
    pub fn gather(&self, a: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let src = nodes[a.0].value.data();
            if shape.iter().product::<usize>() != index.len() {
                return Err(Error::dim("gather", &shape, &[index.len()]));
            }
            if index.iter().any(|&i| i != PAD && i >= src.len()) {
                return Err(Error::dim("gather", nodes[a.0].value.shape(), &shape));
            }
            let data = index
                .iter()
                .map(|&i| if i == PAD { 0.0 } else { src[i] })
                .collect();
            Tensor::new(shape, data)?
        };
        Ok(self.push(v, Op::Gather(a, index), self.needs(&[a])))
    }

    /// Stacks tensors along the leading axis; trailing dimensions must agree.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts.first().ok_or_else(|| Error::dim("concat", &[], &[]))?.0]
                .value
                .shape()
                .to_vec();
            let mut lead = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = &nodes[p.0].value;
                if t.shape().len() != first.len() || t.shape()[1..] != first[1..] {
                    return Err(Error::dim("concat", &first, t.shape()));
                }
                lead += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            let mut shape = first;
            shape[0] = lead;
            Tensor::new(shape, data)?
        };
        Ok(self.push(v, Op::Concat(parts.to_vec()), self.needs(parts)))
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            if shape.iter().product::<usize>() != t.len() {
                return Err(Error::dim("reshape", t.shape(), &shape));
            }
            t.with_shape(shape)
        };
        Ok(self.push(v, Op::Reshape(a), self.needs(&[a])))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a single-element output. Gradients are added to
    /// whatever the nodes already hold.
    pub fn backward(&self, output: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let out_len = nodes[output.0].value.len();
        if out_len != 1 {
            return Err(Error::NonScalarOutput(nodes[output.0].value.shape().to_vec()));
        }
        let mut pending: Vec<Option<Vec<f64>>> = (0..=output.0).map(|_| None).collect();
        pending[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !nodes[i].requires_grad {
                continue;
            }
            propagate(&nodes, i, &g, &mut pending);
            match &mut nodes[i].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn mean_and_scale(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, (var + eps * eps).sqrt())
}

fn accumulate(pending: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = pending[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], pending: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let val = |v: Var| &nodes[v.0].value;
    let wants = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().unwrap();
            let n = val(*b).dims2().unwrap().1;
            if wants(*a) {
                accumulate(pending, *a, m * k, |ga| matmul_nt_into(g, val(*b).data(), ga, m, n, k));
            }
            if wants(*b) {
                accumulate(pending, *b, k * n, |gb| matmul_tn_into(val(*a).data(), g, gb, m, k, n));
            }
        }
        Op::BatchMatMul { a, b, transpose_b } => {
            let sa = val(*a).shape();
            let (groups, m, k) = (sa[0], sa[1], sa[2]);
            let n = node.value.shape()[2];
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if wants(*a) {
                accumulate(pending, *a, groups * m * k, |ga| {
                    for gi in 0..groups {
                        let gg = &g[gi * m * n..(gi + 1) * m * n];
                        let bb = &bd[gi * k * n..(gi + 1) * k * n];
                        let out = &mut ga[gi * m * k..(gi + 1) * m * k];
                        if *transpose_b {
                            // out = a·bᵀ, b is [n×k]: da = g·b
                            matmul_into(gg, bb, out, m, n, k);
                        } else {
                            matmul_nt_into(gg, bb, out, m, n, k);
                        }
                    }
                });
            }
            if wants(*b) {
                accumulate(pending, *b, groups * k * n, |gb| {
                    for gi in 0..groups {
                        let gg = &g[gi * m * n..(gi + 1) * m * n];
                        let ab = &ad[gi * m * k..(gi + 1) * m * k];
                        let out = &mut gb[gi * k * n..(gi + 1) * k * n];
                        if *transpose_b {
                            // db = gᵀ·a, shape [n×k]
                            matmul_tn_into(gg, ab, out, m, n, k);
                        } else {
                            matmul_tn_into(ab, gg, out, m, k, n);
                        }
                    }
                });
            }
        }
        Op::Add(a, b) => {
            for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                if wants(v) {
                    accumulate(pending, v, g.len(), |acc| axpy(acc, g, sign));
                }
            }
        }
        Op::Sub(a, b) => {
            for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                if wants(v) {
                    accumulate(pending, v, g.len(), |acc| axpy(acc, g, sign));
                }
            }
        }
        Op::Mul(a, b) => {
            for (v, other) in [(*a, *b), (*b, *a)] {
                if wants(v) {
                    let od = val(other).data();
                    accumulate(pending, v, g.len(), |acc| {
                        for ((x, gi), o) in acc.iter_mut().zip(g).zip(od) {
                            *x += gi * o;
                        }
                    });
                }
            }
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            accumulate(pending, *a, g.len(), |acc| {
                for ((s, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                    if *xi > 0.0 {
                        *s += gi;
                    }
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            accumulate(pending, *a, g.len(), |acc| {
                for ((s, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                    *s += gi * yi * (1.0 - yi);
                }
            });
        }
        Op::Affine(a, c) => accumulate(pending, *a, g.len(), |acc| axpy(acc, g, *c)),
        Op::ScaleBy(a, s) => {
            let c = val(*s).data()[0];
            if wants(*a) {
                accumulate(pending, *a, g.len(), |acc| axpy(acc, g, c));
            }
            if wants(*s) {
                let dot: f64 = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                accumulate(pending, *s, 1, |acc| acc[0] += dot);
            }
        }
        Op::AddBias(a, b) => {
            if wants(*a) {
                accumulate(pending, *a, g.len(), |acc| axpy(acc, g, 1.0));
            }
            if wants(*b) {
                let n = val(*b).len();
                accumulate(pending, *b, n, |acc| {
                    for row in g.chunks(n) {
                        axpy(acc, row, 1.0);
                    }
                });
            }
        }
        Op::RowSoftmax(a) => {
            let n = node.value.dims2().unwrap().1;
            let y = node.value.data();
            accumulate(pending, *a, g.len(), |acc| {
                for ((ar, gr), yr) in acc.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for ((s, gi), yi) in ar.iter_mut().zip(gr).zip(yr) {
                        *s += yi * (gi - dot);
                    }
                }
            });
        }
        Op::L2NormalizeRows(a, eps) => {
            let n = node.value.dims2().unwrap().1;
            let x = val(*a).data();
            let y = node.value.data();
            accumulate(pending, *a, g.len(), |acc| {
                for (((ar, gr), yr), xr) in acc
                    .chunks_mut(n)
                    .zip(g.chunks(n))
                    .zip(y.chunks(n))
                    .zip(x.chunks(n))
                {
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < *eps {
                        continue;
                    }
                    let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    for ((s, gi), yi) in ar.iter_mut().zip(gr).zip(yr) {
                        *s += (gi - yi * dot) / norm;
                    }
                }
            });
        }
        Op::RowStandardize(a, eps) => {
            let n = node.value.dims2().unwrap().1;
            let x = val(*a).data();
            let y = node.value.data();
            let nf = n as f64;
            accumulate(pending, *a, g.len(), |acc| {
                for (((ar, gr), yr), xr) in acc
                    .chunks_mut(n)
                    .zip(g.chunks(n))
                    .zip(y.chunks(n))
                    .zip(x.chunks(n))
                {
                    let (_, s) = mean_and_scale(xr, *eps);
                    let gmean = gr.iter().sum::<f64>() / nf;
                    let gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / nf;
                    for ((d, gi), yi) in ar.iter_mut().zip(gr).zip(yr) {
                        *d += (gi - gmean - yi * gy) / s;
                    }
                }
            });
        }
        Op::CrossEntropy(a, labels) => {
            let t = val(*a);
            let (b, q) = t.dims2().unwrap();
            let scale = g[0] / b as f64;
            accumulate(pending, *a, b * q, |acc| {
                let mut p = vec![0.0; q];
                for ((ar, xr), &label) in acc.chunks_mut(q).zip(t.data().chunks(q)).zip(labels) {
                    p.copy_from_slice(xr);
                    softmax_in_place(&mut p);
                    p[label] -= 1.0;
                    axpy(ar, &p, scale);
                }
            });
        }
        Op::Sum(a) => {
            let n = val(*a).len();
            accumulate(pending, *a, n, |acc| acc.iter_mut().for_each(|x| *x += g[0]));
        }
        Op::Mean(a) => {
            let n = val(*a).len();
            let s = g[0] / n as f64;
            accumulate(pending, *a, n, |acc| acc.iter_mut().for_each(|x| *x += s));
        }
        Op::Gather(a, index) => {
            let n = val(*a).len();
            accumulate(pending, *a, n, |acc| {
                for (&ix, gi) in index.iter().zip(g) {
                    if ix != PAD {
                        acc[ix] += gi;
                    }
                }
            });
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = val(*p).len();
                if wants(*p) {
                    accumulate(pending, *p, n, |acc| axpy(acc, &g[offset..offset + n], 1.0));
                }
                offset += n;
            }
        }
        Op::Reshape(a) => accumulate(pending, *a, g.len(), |acc| axpy(acc, g, 1.0)),
    }
}

fn axpy(acc: &mut [f64], g: &[f64], c: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += c * b;
    }
}
