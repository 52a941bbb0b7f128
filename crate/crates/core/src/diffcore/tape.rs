use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{CsrMatrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    AddRow(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Spmm {
        matrix: Arc<CsrMatrix>,
        weights: Option<Var>,
        x: Var,
    },
    Relu(Var),
    Elu(Var),
    Abs(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Scale(Var, f64),
    AddScalar(Var),
    RowL2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    SoftmaxRows(Var),
    MaskedCrossEntropy {
        logits: Var,
        rows: Vec<(usize, usize)>,
        probs: Tensor,
    },
    StraightThrough(Var),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    MulRows(Var, Var),
    RowDot(Var, Var),
    SumAll(Var),
    MeanAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode recording of dense and sparse-dense matrix operations.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children. A tape supports exactly one [`Tape::backward`] call; afterwards
/// values stay readable but no new operations may be recorded until
/// [`Tape::reset`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
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

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parents of a recorded node, in argument order.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::AddRow(a, b)
            | Op::MulRows(a, b)
            | Op::RowDot(a, b) => vec![*a, *b],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::Spmm { weights, x, .. } => weights.iter().copied().chain([*x]).collect(),
            Op::Relu(x)
            | Op::Elu(x)
            | Op::Abs(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::SoftmaxRows(x)
            | Op::StraightThrough(x)
            | Op::SumAll(x)
            | Op::MeanAll(x) => vec![*x],
            Op::Dropout { x, .. }
            | Op::RowL2Normalize { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SliceCols { x, .. } => vec![*x],
            Op::MaskedCrossEntropy { logits, .. } => vec![*logits],
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = self.parents_require_grad(&op);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents_require_grad(&self, op: &Op) -> bool {
        let any = |vs: &[Var]| vs.iter().any(|v| self.nodes[v.0].requires_grad);
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::AddRow(a, b)
            | Op::MulRows(a, b)
            | Op::RowDot(a, b) => any(&[*a, *b]),
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => any(vs),
            Op::Spmm { weights, x, .. } => any(&[*x]) || weights.is_some_and(|w| any(&[w])),
            Op::Relu(x)
            | Op::Elu(x)
            | Op::Abs(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::SoftmaxRows(x)
            | Op::StraightThrough(x)
            | Op::SumAll(x)
            | Op::MeanAll(x) => any(&[*x]),
            Op::Dropout { x, .. }
            | Op::RowL2Normalize { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SliceCols { x, .. } => any(&[*x]),
            Op::MaskedCrossEntropy { logits, .. } => any(&[*logits]),
        }
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "hadamard", |x, y| x * y)?;
        self.push("hadamard", value, Op::Hadamard(a, b))
    }

    /// Adds a `1 × d` row to every row of an `n × d` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::shape("add_row", xv.shape(), rv.shape()));
        }
        let mut value = xv.clone();
        let r = rv.data().to_vec();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        self.push("add_row", value, Op::AddRow(x, row))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero inputs".into()))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()))
    }

    /// Stacks matrices vertically (along the first axis).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero inputs".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape("concat_rows", self.shape(first), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()))
    }

    /// Sparse-dense product `S · x` with `S` held constant.
    pub fn spmm(&mut self, matrix: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let value = matrix.matmul(self.value(x))?;
        self.push(
            "spmm",
            value,
            Op::Spmm {
                matrix: Arc::clone(matrix),
                weights: None,
                x,
            },
        )
    }

    /// Sparse-dense product where each stored entry `S[p]` is scaled by
    /// `weights[p]`, a differentiable `nnz × 1` column.
    pub fn spmm_weighted(&mut self, matrix: &Arc<CsrMatrix>, weights: Var, x: Var) -> Result<Var> {
        let w = self.value(weights);
        if w.numel() != matrix.nnz() || w.cols() != 1 {
            return Err(Error::shape("spmm_weighted", &[matrix.nnz(), 1], w.shape()));
        }
        let value = matrix.matmul_weighted(self.value(x), Some(w.data()))?;
        self.push(
            "spmm_weighted",
            value,
            Op::Spmm {
                matrix: Arc::clone(matrix),
                weights: Some(weights),
                x,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(x))
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        self.push("elu", value, Op::Elu(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::abs);
        self.push("abs", value, Op::Abs(x))
    }

    /// Inverted dropout with a mask drawn from `seed`. `p == 0` returns `x`.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("dropout", value, Op::Dropout { x, mask })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v + c);
        self.push("add_scalar", value, Op::AddScalar(x))
    }

    /// Divides each row by its Euclidean norm; zero rows pass through.
    pub fn row_l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut value = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let n = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(n);
            if n > 0.0 {
                value.row_mut(r).iter_mut().for_each(|v| *v /= n);
            }
        }
        self.push("row_l2_normalize", value, Op::RowL2Normalize { x, norms })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows(self.value(x));
        self.push("softmax_rows", value, Op::SoftmaxRows(x))
    }

    /// Mean negative log-likelihood over rows where `mask` is set.
    pub fn masked_cross_entropy(&mut self, logits: Var, labels: &[i64], mask: &[bool]) -> Result<Var> {
        let lv = self.value(logits);
        let classes = lv.cols();
        let mut rows = Vec::new();
        for (i, (&m, &y)) in mask.iter().zip(labels).enumerate() {
            if !m {
                continue;
            }
            if i >= lv.rows() {
                return Err(Error::InvalidArgument(format!(
                    "masked row {i} beyond {} logit rows",
                    lv.rows()
                )));
            }
            if y < 0 || y as usize >= classes {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: label {y} outside 0..{classes}"
                )));
            }
            rows.push((i, y as usize));
        }
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        let probs = softmax_rows(lv);
        let mut loss = 0.0;
        for &(i, y) in &rows {
            let row = lv.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let value = Tensor::scalar(loss / rows.len() as f64);
        self.push(
            "masked_cross_entropy",
            value,
            Op::MaskedCrossEntropy { logits, rows, probs },
        )
    }

    /// Forward value `hard` (plus `soft − anchor` when an anchor is given)
    /// with the gradient routed unchanged into `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor, anchor: Option<&Tensor>) -> Result<Var> {
        let sv = self.value(soft);
        if hard.shape() != sv.shape() {
            return Err(Error::shape("straight_through", sv.shape(), hard.shape()));
        }
        let value = match anchor {
            None => hard,
            Some(a) => {
                let shift = sv.zip_map(a, "straight_through", |s, a| s - a)?;
                hard.zip_map(&shift, "straight_through", |h, d| h + d)?
            }
        };
        self.push("straight_through", value, Op::StraightThrough(soft))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::InvalidArgument(format!(
                "gather index {bad} outside {} rows",
                xv.rows()
            )));
        }
        let value = xv.gather_rows(idx);
        self.push("gather_rows", value, Op::GatherRows { x, idx: idx.to_vec() })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(Error::InvalidArgument(format!(
                "column range {start}..{end} outside {} columns",
                xv.cols()
            )));
        }
        let mut data = Vec::with_capacity(xv.rows() * (end - start));
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let value = Tensor::new(vec![xv.rows(), end - start], data)?;
        self.push("slice_cols", value, Op::SliceCols { x, start })
    }

    /// Scales row `i` of `x` by `s[i]` where `s` is `n × 1`.
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.cols() != 1 || sv.rows() != xv.rows() {
            return Err(Error::shape("mul_rows", xv.shape(), sv.shape()));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let c = sv.data()[r];
            value.row_mut(r).iter_mut().for_each(|v| *v *= c);
        }
        self.push("mul_rows", value, Op::MulRows(x, s))
    }

    /// Per-row inner product, producing an `n × 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("row_dot", av.shape(), bv.shape()));
        }
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let value = Tensor::new(vec![av.rows(), 1], data)?;
        self.push("row_dot", value, Op::RowDot(a, b))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum_all", value, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(xv.sum() / xv.numel() as f64);
        self.push("mean_all", value, Op::MeanAll(x))
    }

    /// Accumulates `d loss / d v` for every node that requires gradients and
    /// marks the tape consumed.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let seed = Tensor::filled(lv.shape(), 1.0);
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb = self.value(*a).transpose().matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Hadamard(a, b) => {
                let ga = g.zip_map(self.value(*b), "hadamard", |x, y| x * y)?;
                let gb = g.zip_map(self.value(*a), "hadamard", |x, y| x * y)?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                let mut gr = Tensor::zeros(self.shape(*row));
                for r in 0..g.rows() {
                    for (o, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *row, gr);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Tensor::zeros(self.shape(p));
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    self.accumulate(grads, p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let gp = Tensor::new(self.shape(p).to_vec(), g.data()[offset..offset + n].to_vec())?;
                    offset += n;
                    self.accumulate(grads, p, gp);
                }
            }
            Op::Spmm { matrix, weights, x } => {
                let w = weights.map(|w| self.value(w).data().to_vec());
                if self.nodes[x.0].requires_grad {
                    let gx = matrix.transpose_matmul_weighted(g, w.as_deref());
                    self.accumulate(grads, *x, gx);
                }
                if let Some(wv) = weights {
                    if self.nodes[wv.0].requires_grad {
                        let xv = self.value(*x);
                        let mut gw = Tensor::zeros(&[matrix.nnz(), 1]);
                        let (rp, ci, vals) = (matrix.row_ptr(), matrix.col_idx(), matrix.values());
                        for r in 0..matrix.rows() {
                            let grow = g.row(r);
                            for p in rp[r]..rp[r + 1] {
                                let dot: f64 = grow.iter().zip(xv.row(ci[p])).map(|(a, b)| a * b).sum();
                                gw.data_mut()[p] = vals[p] * dot;
                            }
                        }
                        self.accumulate(grads, *wv, gw);
                    }
                }
            }
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), "relu", |g, v| if v > 0.0 { g } else { 0.0 })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Elu(x) => {
                let gx = g.zip_map(self.value(*x), "elu", |g, v| if v > 0.0 { g } else { g * v.exp() })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Abs(x) => {
                let gx = g.zip_map(self.value(*x), "abs", |g, v| g * v.signum() * f64::from(v != 0.0))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * c)),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::RowL2Normalize { x, norms } => {
                let y = &node.value;
                let mut gx = g.clone();
                for (r, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    let yr = y.row(r).to_vec();
                    for (o, yv) in gx.row_mut(r).iter_mut().zip(yr) {
                        *o = (*o - dot * yv) / n;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MaskedCrossEntropy { logits, rows, probs } => {
                let scale = g.data()[0] / rows.len() as f64;
                let mut gl = Tensor::zeros(probs.shape());
                for &(i, y) in rows {
                    let out = gl.row_mut(i);
                    out.copy_from_slice(probs.row(i));
                    out[y] -= 1.0;
                    out.iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::StraightThrough(soft) => self.accumulate(grads, *soft, g.clone()),
            Op::GatherRows { x, idx } => {
                let mut gx = Tensor::zeros(self.shape(*x));
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SliceCols { x, start } => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let w = g.cols();
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MulRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let mut gx = g.clone();
                let mut gs = Tensor::zeros(sv.shape());
                for r in 0..g.rows() {
                    let c = sv.data()[r];
                    gs.data_mut()[r] = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= c);
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *s, gs);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = bv.clone();
                let mut gb = av.clone();
                for r in 0..g.rows() {
                    let c = g.data()[r];
                    ga.row_mut(r).iter_mut().for_each(|v| *v *= c);
                    gb.row_mut(r).iter_mut().for_each(|v| *v *= c);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::SumAll(x) => {
                let c = g.data()[0];
                self.accumulate(grads, *x, Tensor::filled(self.shape(*x), c));
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).numel() as f64;
                let c = g.data()[0] / n;
                self.accumulate(grads, *x, Tensor::filled(self.shape(*x), c));
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}
