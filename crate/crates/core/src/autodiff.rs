//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`] handle.
//! Because nodes are only ever appended, the tape is already in topological
//! order: a reverse sweep visits each node after all of its consumers.
//!
//! ```
//! use dadin::autodiff::Tape;
//! use dadin::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```
//!
//! Gradients accumulate: calling [`Tape::backward`] twice without
//! [`Tape::zero_grad`] doubles every gradient buffer.

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::loss;
use crate::tensor::{gemm, transpose, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise binary operations on equally shaped tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Elementwise(Elementwise, Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Softmax(Var),
    GradReverse(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherSum { table: Var, bags: Vec<Vec<usize>> },
    RepeatRows { x: Var, times: usize },
    Reshape(Var),
    SegmentWeightedSum { weights: Var, rows: Var },
    Sum(Var),
    LogLoss { p: Var, targets: Vec<f64>, rows: Vec<usize> },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Elementwise(_, a, b)
            | Op::AddRow(a, b)
            | Op::ScaleRows(a, b)
            | Op::ScaleBy(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Exp(x)
            | Op::Softmax(x)
            | Op::GradReverse(x)
            | Op::Reshape(x)
            | Op::Sum(x) => vec![*x],
            Op::Dropout { x, .. } | Op::SliceCols { x, .. } | Op::RepeatRows { x, .. } => {
                vec![*x]
            }
            Op::Concat(parts) => parts.clone(),
            Op::GatherSum { table, .. } => vec![*table],
            Op::SegmentWeightedSum { weights, rows } => vec![*weights, *rows],
            Op::LogLoss { p, .. } => vec![*p],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of every operation of one forward pass.
#[derive(Debug, Default)]
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

    /// Tracked leaf: receives a gradient buffer on [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, true, Op::Leaf)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, false, Op::Leaf)
    }

    /// Copies the value of `x` into a new constant, cutting the graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn value(&self, x: Var) -> &Tensor {
        &self.nodes[x.0].value
    }

    pub fn grad(&self, x: Var) -> Option<&Tensor> {
        self.nodes[x.0].grad.as_ref()
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push_raw(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, requires_grad, op)
    }

    fn shape(&self, x: Var) -> &[usize] {
        self.nodes[x.0].value.shape()
    }

    // ---- operations ------------------------------------------------------

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 || self.shape(b).len() != 2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let out = gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let value = Tensor::new(vec![c, r], transpose(self.value(x).data(), r, c))?;
        Ok(self.push(value, Op::Transpose(x)))
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err("elementwise", self.shape(a), self.shape(b)));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = match op {
            Elementwise::Add => va.iter().zip(vb).map(|(x, y)| x + y).collect(),
            Elementwise::Sub => va.iter().zip(vb).map(|(x, y)| x - y).collect(),
            Elementwise::Mul => va.iter().zip(vb).map(|(x, y)| x * y).collect(),
        };
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Elementwise(op, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, a, b)
    }

    /// Adds the row vector `b[n]` to every row of `x[m×n]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(b).numel() != n {
            return Err(dim_err("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::AddRow(x, b)))
    }

    /// Multiplies row `i` of `x[m×n]` by `s[i]`, where `s` holds `m` values.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(s).numel() != m {
            return Err(dim_err("scale_rows", self.shape(x), self.shape(s)));
        }
        let factors = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (i, f) in factors.iter().enumerate() {
            for o in &mut out[i * n..(i + 1) * n] {
                *o *= f;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::ScaleRows(x, s)))
    }

    /// Multiplies every entry of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let factor = self.value(s).item()?;
        let value = self.value(x).map(|v| v * factor);
        Ok(self.push(value, Op::ScaleBy(x, s)))
    }

    /// Multiplies by a compile-time constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c))
    }

    /// `max(x, 0)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(stable_sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push(value, Op::Exp(x))
    }

    /// Row-wise softmax over the unmasked positions (`mask[i] == true` keeps
    /// position `i`). Masked entries get weight zero. Every row must keep at
    /// least one position.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.softmax_impl(x, mask, false)
    }

    /// Like [`Tape::softmax`], but a fully masked row yields all zeros
    /// instead of an error.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        self.softmax_impl(x, Some(mask), true)
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<&[bool]>, allow_empty: bool) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(dim_err("softmax mask", self.shape(x), &[mask.len()]));
            }
        }
        let data = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let keep = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            let row = &data[i * n..(i + 1) * n];
            let max = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                if allow_empty {
                    continue;
                }
                return Err(Error::Degenerate(format!(
                    "softmax row {i} has every entry masked"
                )));
            }
            let orow = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in (0..n).filter(|&j| keep(j)) {
                orow[j] = (row[j] - max).exp();
                total += orow[j];
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::Softmax(x)))
    }

    /// Gradient reversal: identity forward, negated gradient backward.
    pub fn grad_reverse(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::GradReverse(x))
    }

    /// Inverted dropout. In training mode each entry is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        let n = self.value(x).numel();
        let mask = if training && rate > 0.0 {
            let keep = 1.0 / (1.0 - rate);
            (0..n)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        } else {
            vec![1.0; n]
        };
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(value, Op::Dropout { x, mask }))
    }

    /// Concatenates along the last axis. All parts must share a row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Degenerate("concat of an empty list".into()));
        };
        let (rows, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut all_vectors = true;
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(dim_err("concat", self.shape(first), self.shape(p)));
            }
            all_vectors &= self.shape(p).len() == 1;
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let shape = if all_vectors {
            vec![total]
        } else {
            vec![rows, total]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..start + len` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if len == 0 || start + len > n {
            return Err(dim_err("slice_cols", self.shape(x), &[start, len]));
        }
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&data[i * n + start..i * n + start + len]);
        }
        let shape = if self.shape(x).len() == 1 {
            vec![len]
        } else {
            vec![m, len]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    /// Row `i` of the output is the sum of `table` rows listed in `bags[i]`;
    /// an empty bag yields a zero row.
    pub fn gather_sum(&mut self, table: Var, bags: &[Vec<usize>]) -> Result<Var> {
        let (vocab, d) = self.value(table).dims2()?;
        if bags.is_empty() {
            return Err(Error::Degenerate("gather over zero bags".into()));
        }
        let weights = self.value(table).data();
        let mut out = vec![0.0; bags.len() * d];
        for (i, bag) in bags.iter().enumerate() {
            for &id in bag {
                if id >= vocab {
                    return Err(Error::Lookup {
                        table: format!("node {}", table.0),
                        id,
                        vocab_size: vocab,
                    });
                }
                for (o, w) in out[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&weights[id * d..(id + 1) * d])
                {
                    *o += w;
                }
            }
        }
        let value = Tensor::new(vec![bags.len(), d], out)?;
        Ok(self.push(
            value,
            Op::GatherSum {
                table,
                bags: bags.to_vec(),
            },
        ))
    }

    /// Repeats each row `times` times consecutively: `[m×n] -> [(m·times)×n]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if times == 0 {
            return Err(Error::Degenerate("repeat_rows with times = 0".into()));
        }
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(m * times * n);
        for i in 0..m {
            for _ in 0..times {
                out.extend_from_slice(&data[i * n..(i + 1) * n]);
            }
        }
        let value = Tensor::new(vec![m * times, n], out)?;
        Ok(self.push(value, Op::RepeatRows { x, times }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// With `weights[B×L]` and `rows[(B·L)×d]`, output row `b` is
    /// `Σ_t weights[b, t] · rows[b·L + t]`.
    pub fn segment_weighted_sum(&mut self, weights: Var, rows: Var) -> Result<Var> {
        let (b, l) = self.value(weights).dims2()?;
        let (bl, d) = self.value(rows).dims2()?;
        if bl != b * l {
            return Err(dim_err(
                "segment_weighted_sum",
                self.shape(weights),
                self.shape(rows),
            ));
        }
        let w = self.value(weights).data();
        let r = self.value(rows).data();
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            for t in 0..l {
                let wt = w[i * l + t];
                let src = &r[(i * l + t) * d..(i * l + t + 1) * d];
                for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(src) {
                    *o += wt * v;
                }
            }
        }
        let value = Tensor::new(vec![b, d], out)?;
        Ok(self.push(value, Op::SegmentWeightedSum { weights, rows }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// `x · wᵀ + b` for `w[out×in]` and `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wt = self.transpose(w)?;
        let xw = self.matmul(x, wt)?;
        self.add_row(xw, b)
    }

    /// Mean clamped cross-entropy of probabilities `p` against `targets`,
    /// restricted to `rows`. An empty selection gives a constant zero.
    pub fn log_loss(&mut self, p: Var, targets: &[f64], rows: &[usize]) -> Result<Var> {
        let probs = self.value(p).data();
        if targets.len() != probs.len() {
            return Err(dim_err("log_loss", self.shape(p), &[targets.len()]));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= probs.len()) {
            return Err(dim_err("log_loss rows", self.shape(p), &[bad]));
        }
        let value = if rows.is_empty() {
            0.0
        } else {
            let ps: Vec<f64> = rows.iter().map(|&r| probs[r]).collect();
            let ys: Vec<f64> = rows.iter().map(|&r| targets[r]).collect();
            loss::mean_log_loss(&ps, &ys)
        };
        Ok(self.push(
            Tensor::scalar(value),
            Op::LogLoss {
                p,
                targets: targets.to_vec(),
                rows: rows.to_vec(),
            },
        ))
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Accumulates `d loss / d node` into the gradient buffer of every tracked
    /// node recorded up to `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        let mut send = |var: Var, data: Vec<f64>| -> Result<()> {
            if !self.nodes[var.0].requires_grad {
                return Ok(());
            }
            let t = Tensor::new(self.shape(var).to_vec(), data)?;
            match &mut grads[var.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                let bt = transpose(self.value(*b).data(), k, n);
                send(*a, gemm(gd, &bt, m, n, k))?;
                let at = transpose(self.value(*a).data(), m, k);
                send(*b, gemm(&at, gd, k, m, n))?;
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2()?;
                send(*x, transpose(gd, c, r))?;
            }
            Op::Elementwise(kind, a, b) => match kind {
                Elementwise::Add => {
                    send(*a, gd.to_vec())?;
                    send(*b, gd.to_vec())?;
                }
                Elementwise::Sub => {
                    send(*a, gd.to_vec())?;
                    send(*b, gd.iter().map(|v| -v).collect())?;
                }
                Elementwise::Mul => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    send(*a, gd.iter().zip(vb).map(|(g, y)| g * y).collect())?;
                    send(*b, gd.iter().zip(va).map(|(g, x)| g * x).collect())?;
                }
            },
            Op::AddRow(x, b) => {
                let (m, n) = self.value(*x).dims2()?;
                send(*x, gd.to_vec())?;
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for (acc, v) in db.iter_mut().zip(&gd[i * n..(i + 1) * n]) {
                        *acc += v;
                    }
                }
                send(*b, db)?;
            }
            Op::ScaleRows(x, s) => {
                let (m, n) = self.value(*x).dims2()?;
                let (vx, vs) = (self.value(*x).data(), self.value(*s).data());
                let mut dx = gd.to_vec();
                let mut ds = vec![0.0; m];
                for i in 0..m {
                    for j in i * n..(i + 1) * n {
                        dx[j] *= vs[i];
                        ds[i] += gd[j] * vx[j];
                    }
                }
                send(*x, dx)?;
                send(*s, ds)?;
            }
            Op::ScaleBy(x, s) => {
                let factor = self.value(*s).item()?;
                let vx = self.value(*x).data();
                send(*x, gd.iter().map(|g| g * factor).collect())?;
                send(*s, vec![gd.iter().zip(vx).map(|(g, v)| g * v).sum()])?;
            }
            Op::Scale(x, c) => send(*x, gd.iter().map(|g| g * c).collect())?,
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                send(
                    *x,
                    gd.iter()
                        .zip(vx)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect(),
                )?;
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                send(
                    *x,
                    gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                )?;
            }
            Op::Exp(x) => {
                let y = node.value.data();
                send(*x, gd.iter().zip(y).map(|(g, y)| g * y).collect())?;
            }
            Op::Softmax(x) => {
                let (m, n) = node.value.dims2()?;
                let y = node.value.data();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let dot: f64 = y[r.clone()].iter().zip(&gd[r.clone()]).map(|(a, b)| a * b).sum();
                    for j in r {
                        dx[j] = y[j] * (gd[j] - dot);
                    }
                }
                send(*x, dx)?;
            }
            Op::GradReverse(x) => send(*x, gd.iter().map(|g| -g).collect())?,
            Op::Dropout { x, mask } => {
                send(*x, gd.iter().zip(mask).map(|(g, m)| g * m).collect())?;
            }
            Op::Concat(parts) => {
                let (rows, total) = node.value.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.value(p).dims2()?;
                    let mut dp = Vec::with_capacity(rows * w);
                    for i in 0..rows {
                        dp.extend_from_slice(&gd[i * total + offset..i * total + offset + w]);
                    }
                    send(p, dp)?;
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).dims2()?;
                let (_, len) = node.value.dims2()?;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + len]
                        .copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                send(*x, dx)?;
            }
            Op::GatherSum { table, bags } => {
                let (vocab, d) = self.value(*table).dims2()?;
                let mut dt = vec![0.0; vocab * d];
                for (i, bag) in bags.iter().enumerate() {
                    for &id in bag {
                        for (acc, v) in dt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&gd[i * d..(i + 1) * d])
                        {
                            *acc += v;
                        }
                    }
                }
                send(*table, dt)?;
            }
            Op::RepeatRows { x, times } => {
                let (m, n) = self.value(*x).dims2()?;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for r in 0..*times {
                        let src = (i * times + r) * n;
                        for (acc, v) in dx[i * n..(i + 1) * n].iter_mut().zip(&gd[src..src + n]) {
                            *acc += v;
                        }
                    }
                }
                send(*x, dx)?;
            }
            Op::Reshape(x) => send(*x, gd.to_vec())?,
            Op::SegmentWeightedSum { weights, rows } => {
                let (b, l) = self.value(*weights).dims2()?;
                let (_, d) = self.value(*rows).dims2()?;
                let w = self.value(*weights).data();
                let r = self.value(*rows).data();
                let mut dw = vec![0.0; b * l];
                let mut dr = vec![0.0; b * l * d];
                for i in 0..b {
                    let gi = &gd[i * d..(i + 1) * d];
                    for t in 0..l {
                        let base = (i * l + t) * d;
                        dw[i * l + t] = gi.iter().zip(&r[base..base + d]).map(|(g, v)| g * v).sum();
                        for (acc, g) in dr[base..base + d].iter_mut().zip(gi) {
                            *acc = w[i * l + t] * g;
                        }
                    }
                }
                send(*weights, dw)?;
                send(*rows, dr)?;
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                send(*x, vec![gd[0]; n])?;
            }
            Op::LogLoss { p, targets, rows } => {
                let probs = self.value(*p).data();
                let mut dp = vec![0.0; probs.len()];
                let k = rows.len() as f64;
                for &r in rows {
                    let pr = probs[r];
                    if pr > loss::PROB_EPS && pr < 1.0 - loss::PROB_EPS {
                        dp[r] += gd[0] * (pr - targets[r]) / (pr * (1.0 - pr)) / k;
                    }
                }
                send(*p, dp)?;
            }
        }
        Ok(())
    }
}

/// Logistic function evaluated without overflow for large `|x|`.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selector() {
        let mut t = Tape::new();
        let i2 = t.constant(mat(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let a = t.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let p = t.matmul(i2, a).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let sel = t.constant(mat(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let col = t.constant(mat(2, 1, &[5.0, 7.0]));
        let p = t.matmul(sel, col).unwrap();
        assert_eq!(t.value(p).data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(vec![2, 3]));
        let b = t.constant(Tensor::zeros(vec![2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn elementwise_definitions() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let z = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let b = t.constant(Tensor::vector(vec![3.0, 4.0]));
        let s = t.add(a, z).unwrap();
        assert_eq!(t.value(s).data(), &[1.0, 2.0]);
        let m = t.mul(a, b).unwrap();
        assert_eq!(t.value(m).data(), &[3.0, 8.0]);
        let c = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(t.add(a, c), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mul_gradient_is_other_operand() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![0.3, -1.2, 2.5]));
        let b = t.leaf(Tensor::vector(vec![4.0, 0.5, -3.0]));
        let m = t.mul(a, b).unwrap();
        let s = t.sum(m);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap().data(), t.value(b).data());
        assert_eq!(t.grad(b).unwrap().data(), t.value(a).data());
    }

    #[test]
    fn relu_forward_and_kink() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let pos = t.constant(Tensor::vector(vec![0.5, 3.0]));
        let y = t.relu(pos);
        assert_eq!(t.value(y).data(), &[0.5, 3.0]);
    }

    #[test]
    fn sigmoid_values_and_slope() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0, 100.0, -100.0]));
        let y = t.sigmoid(x);
        let v = t.value(y).data().to_vec();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!(v[2] >= 0.0 && v[2] < 1e-40);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data()[0], 0.25);
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = t.softmax(x, None).unwrap();
        for v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = t.constant(Tensor::vector(vec![42.0]));
        let y = t.softmax(x, None).unwrap();
        assert_eq!(t.value(y).data(), &[1.0]);

        // e^1 / (e^1 + e^2)
        let expected = 1f64.exp() / (1f64.exp() + 2f64.exp());
        let x = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let y = t.softmax(x, None).unwrap();
        assert!((t.value(y).data()[0] - expected).abs() < 1e-15);
        assert!((t.value(y).data()[0] - 0.26894).abs() < 1e-5);
        assert!((t.value(y).data()[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn softmax_masking() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![5.0, 1.0, 1.0]));
        let y = t.softmax(x, Some(&[false, true, true])).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.5, 0.5]);
        let err = t.softmax(x, Some(&[false, false, false])).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
        let y = t.masked_softmax_rows(x, &[false, false, false]).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_reverse_forward_and_backward() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![3.5, -2.0]));
        let r = t.grad_reverse(x);
        assert_eq!(t.value(r).data(), &[3.5, -2.0]);
        let w = t.constant(Tensor::vector(vec![1.0, -4.0]));
        let m = t.mul(r, w).unwrap();
        let s = t.sum(m);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[-1.0, 4.0]);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = t.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
        let y = t.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
        assert!(matches!(
            t.dropout(x, 1.0, true, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(t.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = Tape::new();
        let input = vec![1.0, -2.0, 0.5, 3.0];
        let x = t.constant(Tensor::vector(input.clone()));
        let trials = 100_000;
        let mut acc = vec![0.0; input.len()];
        for _ in 0..trials {
            let y = t.dropout(x, 0.5, true, &mut rng).unwrap();
            for (a, v) in acc.iter_mut().zip(t.value(y).data()) {
                *a += v;
            }
            t.nodes.truncate(1);
        }
        for (a, want) in acc.iter().zip(&input) {
            let mean = a / trials as f64;
            assert!((mean - want).abs() <= 0.02 * want.abs(), "{mean} vs {want}");
        }
    }

    #[test]
    fn dropout_mask_reused_in_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let x = t.leaf(Tensor::ones(vec![64]));
        let y = t.dropout(x, 0.5, true, &mut rng).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), t.value(y).data());
    }

    #[test]
    fn concat_examples() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0]));
        let b = t.leaf(Tensor::vector(vec![2.0, 3.0]));
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).shape(), &[3]);
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);
        let single = t.concat(&[b]).unwrap();
        assert_eq!(t.value(single).data(), t.value(b).data());
        assert!(matches!(t.concat(&[]), Err(Error::Degenerate(_))));

        let s = t.sum(c);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap().data(), &[1.0]);
        assert_eq!(t.grad(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_examples_and_accumulation() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        t.zero_grad();
        let sq = t.mul(x, x).unwrap();
        let l = t.sum(sq);
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[4.0, -8.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn gather_sum_scatters_to_touched_rows() {
        let mut t = Tape::new();
        let table = t.leaf(mat(3, 2, &[1.0, 2.0, 0.0, 1.0, 9.0, 9.0]));
        let out = t.gather_sum(table, &[vec![0, 1], vec![], vec![1]]).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, 3.0, 0.0, 0.0, 0.0, 1.0]);
        let s = t.sum(out);
        t.backward(s).unwrap();
        assert_eq!(t.grad(table).unwrap().data(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            t.gather_sum(table, &[vec![3]]),
            Err(Error::Lookup { id: 3, .. })
        ));
    }
}
