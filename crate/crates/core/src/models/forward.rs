use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, BoundGnn, GnnParams, ModelKind};
use crate::diffcore::{CsrMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Features of the original nodes.
#[derive(Clone, Debug)]
pub enum FeatureInput {
    /// Constant sparse matrix; the first layer multiplies it directly.
    Sparse(Arc<CsrMatrix>),
    Dense(Var),
}

impl FeatureInput {
    /// Stores a mostly-zero dense matrix in sparse form.
    pub fn sparse_from(x: &Tensor) -> Self {
        FeatureInput::Sparse(Arc::new(CsrMatrix::from_dense(x)))
    }

    pub fn rows(&self, tape: &Tape) -> usize {
        match self {
            FeatureInput::Sparse(x) => x.rows(),
            FeatureInput::Dense(x) => tape.value(*x).rows(),
        }
    }

    pub fn cols(&self, tape: &Tape) -> usize {
        match self {
            FeatureInput::Sparse(x) => x.cols(),
            FeatureInput::Dense(x) => tape.value(*x).cols(),
        }
    }
}

/// Rows appended after the original nodes, each a weighted sum of two
/// original rows: `coef_src[k]·X[src[k]] + coef_dst[k]·X[dst[k]]`.
#[derive(Clone, Debug)]
pub struct InsertedRows {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `K × 1` columns.
    pub coef_src: Var,
    pub coef_dst: Var,
}

/// Propagation matrix with optional differentiable per-entry weights.
#[derive(Clone, Debug)]
pub struct Operator {
    pub matrix: Arc<CsrMatrix>,
    pub weights: Option<Var>,
}

impl Operator {
    pub fn constant(matrix: CsrMatrix) -> Self {
        Self {
            matrix: Arc::new(matrix),
            weights: None,
        }
    }

    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.weights {
            Some(w) => tape.spmm_weighted(&self.matrix, w, x),
            None => tape.spmm(&self.matrix, x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks derived from `seed`.
    Train { seed: u64 },
    Eval,
}

/// Output of a forward pass. `hidden[l]` is the post-activation state of
/// layer `l + 1` over all (original and inserted) nodes.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    pub hidden: Vec<Var>,
}

fn dropout_csr(m: &CsrMatrix, p: f64, seed: u64) -> Result<CsrMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - p);
    let values = m
        .values()
        .iter()
        .map(|&v| if rng.gen::<f64>() < p { 0.0 } else { v * keep })
        .collect();
    m.with_values(values)
}

fn activate(tape: &mut Tape, act: Activation, x: Var) -> Result<Var> {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Elu => tape.elu(x),
        Activation::Identity => Ok(x),
    }
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(layer as u64 + 1))
}

/// `X̂ W` over original and inserted rows, using linearity to form inserted
/// rows from the projected endpoints.
fn project_input(
    tape: &mut Tape,
    input: &FeatureInput,
    inserted: Option<&InsertedRows>,
    w: Var,
    dropout: Option<(f64, u64)>,
) -> Result<Var> {
    let base = match (input, dropout) {
        (FeatureInput::Sparse(x), None) => tape.spmm(x, w)?,
        (FeatureInput::Sparse(x), Some((p, seed))) => tape.spmm(&Arc::new(dropout_csr(x, p, seed)?), w)?,
        (FeatureInput::Dense(x), d) => {
            let x = match d {
                Some((p, seed)) => tape.dropout(*x, p, seed)?,
                None => *x,
            };
            tape.matmul(x, w)?
        }
    };
    extend_inserted(tape, base, inserted)
}

fn extend_inserted(tape: &mut Tape, base: Var, inserted: Option<&InsertedRows>) -> Result<Var> {
    let Some(ins) = inserted else { return Ok(base) };
    if ins.src.is_empty() {
        return Ok(base);
    }
    let from_src = tape.gather_rows(base, &ins.src)?;
    let from_dst = tape.gather_rows(base, &ins.dst)?;
    let a = tape.mul_rows(from_src, ins.coef_src)?;
    let b = tape.mul_rows(from_dst, ins.coef_dst)?;
    let rows = tape.add(a, b)?;
    tape.concat_rows(&[base, rows])
}

/// Runs either architecture. GCN expects the symmetric normalized operator
/// with self-loops; SAGE expects the neighbor-mean operator.
pub fn gnn_forward(
    tape: &mut Tape,
    params: &GnnParams,
    bound: &BoundGnn,
    op: &Operator,
    input: &FeatureInput,
    inserted: Option<&InsertedRows>,
    mode: Mode,
) -> Result<Forward> {
    let cfg = &params.config;
    let n_rows = input.rows(tape) + inserted.map_or(0, |i| i.src.len());
    if op.matrix.rows() != n_rows || op.matrix.cols() != n_rows {
        return Err(Error::shape("gnn_forward", &[op.matrix.rows(), op.matrix.cols()], &[n_rows, n_rows]));
    }
    let in_cols = input.cols(tape);
    if in_cols != cfg.in_dim {
        return Err(Error::shape("gnn_forward", &[n_rows, in_cols], &[cfg.in_dim, cfg.hidden]));
    }
    let drop = |layer: usize| match mode {
        Mode::Train { seed } if cfg.dropout > 0.0 => Some((cfg.dropout, layer_seed(seed, layer))),
        _ => None,
    };

    let mut hidden = Vec::with_capacity(cfg.layers);
    let mut h: Option<Var> = None;
    for l in 0..cfg.layers {
        let pre = match cfg.kind {
            ModelKind::Gcn => {
                let z = match h {
                    None => project_input(tape, input, inserted, bound.weights[0], drop(0))?,
                    Some(prev) => {
                        let prev = dropped(tape, prev, drop(l))?;
                        tape.matmul(prev, bound.weights[l])?
                    }
                };
                op.apply(tape, z)?
            }
            ModelKind::Sage => {
                let (zs, zn) = match h {
                    None => {
                        // Both projections must see the same dropped input.
                        let zs = project_input(tape, input, inserted, bound.weights[0], drop(0))?;
                        let zn = project_input(tape, input, inserted, bound.neighbor_weights[0], drop(0))?;
                        (zs, zn)
                    }
                    Some(prev) => {
                        let prev = dropped(tape, prev, drop(l))?;
                        let zs = tape.matmul(prev, bound.weights[l])?;
                        let zn = tape.matmul(prev, bound.neighbor_weights[l])?;
                        (zs, zn)
                    }
                };
                let agg = op.apply(tape, zn)?;
                tape.add(zs, agg)?
            }
        };
        let pre = tape.add_row(pre, bound.biases[l])?;
        let out = activate(tape, cfg.activation, pre)?;
        hidden.push(out);
        h = Some(out);
    }
    let last = dropped(tape, h.expect("at least one layer"), drop(cfg.layers))?;
    let logits = tape.matmul(last, bound.head_weight)?;
    let logits = tape.add_row(logits, bound.head_bias)?;
    Ok(Forward { logits, hidden })
}

fn dropped(tape: &mut Tape, x: Var, d: Option<(f64, u64)>) -> Result<Var> {
    match d {
        Some((p, seed)) => tape.dropout(x, p, seed),
        None => Ok(x),
    }
}

/// `H^(l) = act(Â H^(l−1) W^(l) + b^(l))`, then a linear head.
pub fn gcn_forward(
    tape: &mut Tape,
    params: &GnnParams,
    bound: &BoundGnn,
    op: &Operator,
    input: &FeatureInput,
    mode: Mode,
) -> Result<Forward> {
    if params.config.kind != ModelKind::Gcn {
        return Err(Error::InvalidArgument("gcn_forward called with SAGE parameters".into()));
    }
    gnn_forward(tape, params, bound, op, input, None, mode)
}

/// `H^(l) = act([H^(l−1) ‖ mean_N(H^(l−1))] W^(l) + b^(l))`, then a linear head.
pub fn sage_forward(
    tape: &mut Tape,
    params: &GnnParams,
    bound: &BoundGnn,
    op: &Operator,
    input: &FeatureInput,
    mode: Mode,
) -> Result<Forward> {
    if params.config.kind != ModelKind::Sage {
        return Err(Error::InvalidArgument("sage_forward called with GCN parameters".into()));
    }
    gnn_forward(tape, params, bound, op, input, None, mode)
}
