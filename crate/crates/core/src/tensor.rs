//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] owns every tensor touched during a forward pass and records one
//! primitive operation per produced tensor. [`Tape::backward`] walks the record
//! in reverse, accumulating `dLoss/dTensor` into each node; gradients of
//! `requires_grad` tensors are then readable through [`Tape::grad`].
//!
//! The tape supports exactly one backward pass per forward record: a second
//! call without [`Tape::reset_grads`] is a contract error, and higher-order
//! derivatives are out of scope. All arithmetic is `f64`, row-major, and
//! sequential, so identical inputs replay to bit-identical outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("shape mismatch in {op}: left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects a {expected} tensor, got shape {got:?}")]
    RankMismatch {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("{targets} target labels for {rows} logit rows")]
    TargetCountMismatch { targets: usize, rows: usize },
    #[error("probability row {row} sums to {sum:.12}, expected 1 within {tolerance:e}")]
    NotNormalized { row: usize, sum: f64, tolerance: f64 },
    #[error("backward requires a scalar loss, got shape {got:?}")]
    NotScalar { got: Vec<usize> },
    #[error("backward already ran on this tape; call reset_grads before running it again")]
    BackwardAlreadyRun,
}

/// Probability rows fed to [`Tape::neg_entropy`] must sum to 1 within this.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
            requires_grad: false,
            grad: None,
        }
    }

    /// Rank-0-like scalar, stored as shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a gradient target and returns it.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Gradient of the most recent backward pass, if one reached this tensor.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    ///
    /// # Panics
    /// Panics if the tensor holds more than one element.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    /// Interprets the tensor as a matrix: 1-D `[n]` becomes one row.
    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(TensorError::RankMismatch {
                op,
                expected: "1-D or 2-D",
                got: self.shape.clone(),
            }),
        }
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add {
        a: TensorId,
        b: TensorId,
    },
    AddRow {
        a: TensorId,
        bias: TensorId,
    },
    Scale {
        a: TensorId,
        factor: f64,
    },
    MatMul {
        a: TensorId,
        b: TensorId,
    },
    Transpose {
        a: TensorId,
    },
    Relu {
        a: TensorId,
    },
    Sigmoid {
        a: TensorId,
    },
    Softmax {
        a: TensorId,
    },
    MseLoss {
        pred: TensorId,
        target: TensorId,
    },
    CrossEntropy {
        logits: TensorId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    NegEntropy {
        p: TensorId,
    },
}

/// Records a forward pass and replays it in reverse for gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of tensors recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor; its `requires_grad` flag decides whether
    /// [`Tape::backward`] will populate a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        self.push(tensor, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    /// Gradient accumulated for `id` by the most recent backward pass.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad()
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> TensorId {
        self.nodes.push(tensor);
        self.ops.push(op);
        TensorId(self.nodes.len() - 1)
    }

    fn out_flags(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn result(&mut self, shape: Vec<usize>, data: Vec<f64>, grad_needed: bool, op: Op) -> TensorId {
        let mut t = Tensor::new(shape, data).expect("op produced mismatched shape");
        t.requires_grad = grad_needed;
        self.push(t, op)
    }

    /// Element-wise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.shape != tb.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        let g = self.out_flags(&[a, b]);
        Ok(self.result(shape, data, g, Op::Add { a, b }))
    }

    /// Adds a `[n]` bias to every row of a `[m × n]` matrix.
    pub fn add_row(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[bias.0]);
        let (m, n) = ta.rows_cols("add_row")?;
        if tb.shape != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for c in 0..n {
                data.push(ta.data[r * n + c] + tb.data[c]);
            }
        }
        let shape = ta.shape.clone();
        let g = self.out_flags(&[a, bias]);
        Ok(self.result(shape, data, g, Op::AddRow { a, bias }))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0];
        let data = ta.data.iter().map(|x| x * factor).collect();
        let shape = ta.shape.clone();
        let g = self.out_flags(&[a]);
        Ok(self.result(shape, data, g, Op::Scale { a, factor }))
    }

    /// Matrix product of `[m × k]` and `[k × n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if ta.shape.len() != 2 || tb.shape.len() != 2 {
            let bad = if ta.shape.len() != 2 { ta } else { tb };
            return Err(TensorError::RankMismatch {
                op: "matmul",
                expected: "2-D",
                got: bad.shape.clone(),
            });
        }
        let (m, k) = (ta.shape[0], ta.shape[1]);
        let (k2, n) = (tb.shape[0], tb.shape[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: ta.shape.clone(),
                right: tb.shape.clone(),
            });
        }
        let data = matmul_data(&ta.data, &tb.data, m, k, n);
        let g = self.out_flags(&[a, b]);
        Ok(self.result(vec![m, n], data, g, Op::MatMul { a, b }))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0];
        if ta.shape.len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "transpose",
                expected: "2-D",
                got: ta.shape.clone(),
            });
        }
        let (m, n) = (ta.shape[0], ta.shape[1]);
        let data = transpose_data(&ta.data, m, n);
        let g = self.out_flags(&[a]);
        Ok(self.result(vec![n, m], data, g, Op::Transpose { a }))
    }

    /// Element-wise `max(x, 0)`; the subgradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0];
        let data = ta.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = ta.shape.clone();
        let g = self.out_flags(&[a]);
        Ok(self.result(shape, data, g, Op::Relu { a }))
    }

    /// Element-wise logistic function `1 / (1 + exp(-x))`.
    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0];
        let data = ta.data.iter().map(|&x| sigmoid_scalar(x)).collect();
        let shape = ta.shape.clone();
        let g = self.out_flags(&[a]);
        Ok(self.result(shape, data, g, Op::Sigmoid { a }))
    }

    /// Row-wise softmax of a 1-D vector or each row of a 2-D matrix,
    /// stabilized by max subtraction so logits of any magnitude stay finite.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let ta = &self.nodes[a.0];
        let (m, n) = ta.rows_cols("softmax")?;
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            softmax_row(&ta.data[r * n..(r + 1) * n], &mut data[r * n..(r + 1) * n]);
        }
        let shape = ta.shape.clone();
        let g = self.out_flags(&[a]);
        Ok(self.result(shape, data, g, Op::Softmax { a }))
    }

    /// Mean squared error between two same-shape tensors, as a scalar.
    pub fn mse_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId, TensorError> {
        let (tp, tt) = (&self.nodes[pred.0], &self.nodes[target.0]);
        if tp.shape != tt.shape {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                left: tp.shape.clone(),
                right: tt.shape.clone(),
            });
        }
        let n = tp.data.len() as f64;
        let sum: f64 = tp
            .data
            .iter()
            .zip(&tt.data)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let g = self.out_flags(&[pred, target]);
        Ok(self.result(vec![1], vec![sum / n], g, Op::MseLoss { pred, target }))
    }

    /// Mean cross-entropy between logit rows and integer class targets,
    /// computed in log space (log-sum-exp) so extreme logits stay finite.
    ///
    /// Accepts `[n]` logits with one target or `[m × n]` logits with `m`
    /// targets. The gradient with respect to the logits of each row is
    /// `(softmax(row) - onehot(target)) / m`.
    pub fn cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &[usize],
    ) -> Result<TensorId, TensorError> {
        let tl = &self.nodes[logits.0];
        let (m, n) = tl.rows_cols("cross_entropy")?;
        if targets.len() != m {
            return Err(TensorError::TargetCountMismatch {
                targets: targets.len(),
                rows: m,
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(TensorError::ClassOutOfRange {
                index: bad,
                classes: n,
            });
        }
        let mut probs = vec![0.0; m * n];
        let mut total = 0.0;
        for r in 0..m {
            let row = &tl.data[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            total += max + sum_exp.ln() - row[targets[r]];
            softmax_row(row, &mut probs[r * n..(r + 1) * n]);
        }
        let g = self.out_flags(&[logits]);
        Ok(self.result(
            vec![1],
            vec![total / m as f64],
            g,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Negative Shannon entropy `Σ p·ln(p)` of a probability vector, with the
    /// `0·ln(0) = 0` convention; for a 2-D input, the mean over rows.
    ///
    /// Every row must already sum to 1 within [`NORMALIZATION_TOLERANCE`].
    /// The result lies in `[-ln(n), 0]`.
    pub fn neg_entropy(&mut self, p: TensorId) -> Result<TensorId, TensorError> {
        let tp = &self.nodes[p.0];
        let (m, n) = tp.rows_cols("neg_entropy")?;
        let mut total = 0.0;
        for r in 0..m {
            let row = &tp.data[r * n..(r + 1) * n];
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(TensorError::NotNormalized {
                    row: r,
                    sum,
                    tolerance: NORMALIZATION_TOLERANCE,
                });
            }
            total += row.iter().map(|&v| xlogx(v)).sum::<f64>();
        }
        let g = self.out_flags(&[p]);
        Ok(self.result(vec![1], vec![total / m as f64], g, Op::NegEntropy { p }))
    }

    /// Accumulates `dLoss/dTensor` for every recorded tensor, starting from a
    /// scalar loss. `requires_grad` tensors the loss does not depend on get a
    /// zero gradient. A single backward pass is allowed per record; call
    /// [`Tape::reset_grads`] to run another.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        let loss_node = &self.nodes[loss.0];
        if !loss_node.is_scalar() {
            return Err(TensorError::NotScalar {
                got: loss_node.shape.clone(),
            });
        }
        self.backward_done = true;

        let count = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..count).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..count).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.step_back(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = Some(grad.unwrap_or_else(|| vec![0.0; node.data.len()]));
            }
        }
        Ok(())
    }

    /// Clears every gradient and re-arms the tape for another backward pass.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn step_back(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add { a, b } => {
                accumulate(grads, a.0, self.nodes[a.0].len(), |acc| {
                    for (dst, src) in acc.iter_mut().zip(g) {
                        *dst += src;
                    }
                });
                accumulate(grads, b.0, self.nodes[b.0].len(), |acc| {
                    for (dst, src) in acc.iter_mut().zip(g) {
                        *dst += src;
                    }
                });
            }
            Op::AddRow { a, bias } => {
                let n = self.nodes[bias.0].len();
                accumulate(grads, a.0, self.nodes[a.0].len(), |acc| {
                    for (dst, src) in acc.iter_mut().zip(g) {
                        *dst += src;
                    }
                });
                accumulate(grads, bias.0, n, |acc| {
                    for (j, src) in g.iter().enumerate() {
                        acc[j % n] += src;
                    }
                });
            }
            Op::Scale { a, factor } => {
                accumulate(grads, a.0, self.nodes[a.0].len(), |acc| {
                    for (dst, src) in acc.iter_mut().zip(g) {
                        *dst += factor * src;
                    }
                });
            }
            Op::MatMul { a, b } => {
                let ta = &self.nodes[a.0];
                let tb = &self.nodes[b.0];
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let n = tb.shape[1];
                // dA = dC · Bᵀ
                let bt = transpose_data(&tb.data, k, n);
                let da = matmul_data(g, &bt, m, n, k);
                accumulate(grads, a.0, m * k, |acc| {
                    for (dst, src) in acc.iter_mut().zip(&da) {
                        *dst += src;
                    }
                });
                // dB = Aᵀ · dC
                let at = transpose_data(&ta.data, m, k);
                let db = matmul_data(&at, g, k, m, n);
                accumulate(grads, b.0, k * n, |acc| {
                    for (dst, src) in acc.iter_mut().zip(&db) {
                        *dst += src;
                    }
                });
            }
            Op::Transpose { a } => {
                let ta = &self.nodes[a.0];
                let (m, n) = (ta.shape[0], ta.shape[1]);
                let gt = transpose_data(g, n, m);
                accumulate(grads, a.0, m * n, |acc| {
                    for (dst, src) in acc.iter_mut().zip(&gt) {
                        *dst += src;
                    }
                });
            }
            Op::Relu { a } => {
                let ta = &self.nodes[a.0];
                accumulate(grads, a.0, ta.len(), |acc| {
                    for ((dst, src), &x) in acc.iter_mut().zip(g).zip(&ta.data) {
                        if x > 0.0 {
                            *dst += src;
                        }
                    }
                });
            }
            Op::Sigmoid { a } => {
                let out = &self.nodes[i].data;
                accumulate(grads, a.0, out.len(), |acc| {
                    for ((dst, src), &s) in acc.iter_mut().zip(g).zip(out) {
                        *dst += src * s * (1.0 - s);
                    }
                });
            }
            Op::Softmax { a } => {
                let out = &self.nodes[i];
                let (m, n) = out.rows_cols("softmax").expect("validated at forward");
                accumulate(grads, a.0, m * n, |acc| {
                    for r in 0..m {
                        let s = &out.data[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = s.iter().zip(gr).map(|(sv, gv)| sv * gv).sum();
                        for c in 0..n {
                            acc[r * n + c] += s[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::MseLoss { pred, target } => {
                let tp = &self.nodes[pred.0];
                let tt = &self.nodes[target.0];
                let scale = 2.0 * g[0] / tp.len() as f64;
                accumulate(grads, pred.0, tp.len(), |acc| {
                    for ((dst, &p), &t) in acc.iter_mut().zip(&tp.data).zip(&tt.data) {
                        *dst += scale * (p - t);
                    }
                });
                accumulate(grads, target.0, tt.len(), |acc| {
                    for ((dst, &p), &t) in acc.iter_mut().zip(&tp.data).zip(&tt.data) {
                        *dst -= scale * (p - t);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let tl = &self.nodes[logits.0];
                let (m, n) = tl.rows_cols("cross_entropy").expect("validated at forward");
                let scale = g[0] / m as f64;
                accumulate(grads, logits.0, m * n, |acc| {
                    for r in 0..m {
                        for c in 0..n {
                            let onehot = if targets[r] == c { 1.0 } else { 0.0 };
                            acc[r * n + c] += scale * (probs[r * n + c] - onehot);
                        }
                    }
                });
            }
            Op::NegEntropy { p } => {
                let tp = &self.nodes[p.0];
                let (m, n) = tp.rows_cols("neg_entropy").expect("validated at forward");
                let scale = g[0] / m as f64;
                accumulate(grads, p.0, m * n, |acc| {
                    for (dst, &v) in acc.iter_mut().zip(&tp.data) {
                        // d(p·ln p)/dp = ln p + 1; clamp keeps saturated rows finite.
                        *dst += scale * (v.max(f64::MIN_POSITIVE).ln() + 1.0);
                    }
                });
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[idx].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn xlogx(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        v * v.ln()
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av != 0.0 {
                let b_row = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

fn transpose_data(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
