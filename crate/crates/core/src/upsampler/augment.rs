use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{InsertionDecision, INSERT};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphdata::{build_propagation, in_degrees, EntryOrigin, UNLABELED};
use crate::models::{InsertedRows, ModelKind, Operator};

/// Features given to an inserted node `k` on edge `(i, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Zero,
    /// `α X_i + (1 − α) X_j`.
    Mean,
    /// `P̂_ij[0] X_i + P̂_ij[1] X_j`, differentiable in `P̂`.
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentOptions {
    pub kind: ModelKind,
    pub init: InitMode,
    /// Source weight of [`InitMode::Mean`].
    pub alpha: f64,
}

impl AugmentOptions {
    pub fn new(kind: ModelKind, init: InitMode) -> Self {
        Self { kind, init, alpha: 0.5 }
    }
}

/// Node `node` was placed on original edge `edges[edge] = (src, dst)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Insertion {
    pub node: usize,
    pub src: usize,
    pub dst: usize,
    pub edge: usize,
}

/// Upsampled graph. Nodes `0..n_original` keep their indices; inserted
/// nodes follow in edge order.
#[derive(Clone, Debug)]
pub struct AugmentedGraph {
    pub n_original: usize,
    pub insertions: Vec<Insertion>,
    /// Kept original edges in their original order, then `(i, k), (k, j)` per
    /// insertion.
    pub edges: Vec<(usize, usize)>,
    /// Propagation operator for the configured architecture.
    pub operator: Operator,
    /// Feature rows of inserted nodes; `None` without insertions.
    pub inserted: Option<InsertedRows>,
}

impl AugmentedGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_original + self.insertions.len()
    }

    pub fn n_inserted(&self) -> usize {
        self.insertions.len()
    }

    /// Labels extended with [`UNLABELED`] for inserted nodes.
    pub fn labels(&self, original: &[i64]) -> Vec<i64> {
        let mut out = original.to_vec();
        out.resize(self.n_nodes(), UNLABELED);
        out
    }

    /// Mask extended with `false` for inserted nodes.
    pub fn mask(&self, original: &[bool]) -> Vec<bool> {
        let mut out = original.to_vec();
        out.resize(self.n_nodes(), false);
        out
    }

    /// Directed edge set after merging each inserted node's two incident
    /// edges back into one, sorted.
    pub fn contract(&self) -> Vec<(usize, usize)> {
        let n = self.n_original;
        let mut out: Vec<(usize, usize)> = self.edges.iter().copied().filter(|&(i, j)| i < n && j < n).collect();
        out.extend(self.insertions.iter().map(|ins| (ins.src, ins.dst)));
        out.sort_unstable();
        out
    }

    /// Explicit feature matrix `[X; X̂_inserted]` over all nodes.
    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(ins) = &self.inserted else { return Ok(x) };
        let a = tape.gather_rows(x, &ins.src)?;
        let b = tape.gather_rows(x, &ins.dst)?;
        let a = tape.mul_rows(a, ins.coef_src)?;
        let b = tape.mul_rows(b, ins.coef_dst)?;
        let rows = tape.add(a, b)?;
        tape.concat_rows(&[x, rows])
    }
}

fn validate(n: usize, edges: &[(usize, usize)]) -> Result<()> {
    let mut seen = HashSet::with_capacity(edges.len());
    for &(i, j) in edges {
        if i >= n || j >= n || i == j || !seen.insert((i, j)) {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) is out of range, a self-loop or repeated"
            )));
        }
    }
    Ok(())
}

/// Places a new node `k` on every selected edge `(i, j)`, replacing it with
/// `(i, k)` and `(k, j)`, and builds the renormalized operator.
///
/// Normalization constants come from the hard structure. With learned
/// decisions, entries are additionally scaled by the straight-through mask
/// (`1 − M_e` on original edges, `M_e` on the two edges of an insertion)
/// so the downstream loss reaches the mask; removed edges stay stored with
/// weight zero for that reason.
pub fn build_augmented(
    tape: &mut Tape,
    n: usize,
    decision: &InsertionDecision,
    opts: &AugmentOptions,
) -> Result<AugmentedGraph> {
    validate(n, &decision.edges)?;
    if decision.mask.len() != decision.edges.len() {
        return Err(Error::shape("build_augmented", &[decision.mask.len()], &[decision.edges.len()]));
    }
    let mut insertions = Vec::new();
    let mut kept = Vec::with_capacity(decision.edges.len());
    for (e, &(i, j)) in decision.edges.iter().enumerate() {
        if decision.mask[e] {
            insertions.push(Insertion {
                node: n + insertions.len(),
                src: i,
                dst: j,
                edge: e,
            });
        } else {
            kept.push((i, j));
        }
    }
    let total = n + insertions.len();
    let new_edges: Vec<(usize, usize)> = insertions
        .iter()
        .flat_map(|ins| [(ins.src, ins.node), (ins.node, ins.dst)])
        .collect();
    let mut edges = kept;
    edges.extend_from_slice(&new_edges);

    // Degrees of the hard structure.
    let (self_loops, deg) = match opts.kind {
        ModelKind::Gcn => (true, in_degrees(total, &edges).into_iter().map(|d| d + 1.0).collect::<Vec<_>>()),
        ModelKind::Sage => (false, in_degrees(total, &edges)),
    };
    let coef = |r: usize, c: usize| match opts.kind {
        ModelKind::Gcn => 1.0 / (deg[r] * deg[c]).sqrt(),
        ModelKind::Sage => 1.0 / deg[r],
    };

    let operator = match decision.vars {
        None => Operator::constant(build_propagation(total, &edges, self_loops, coef).matrix),
        Some(vars) => {
            let mut pattern = decision.edges.clone();
            pattern.extend_from_slice(&new_edges);
            let prop = build_propagation(total, &pattern, self_loops, coef);
            let m_edges = decision.edges.len();
            // Stacked column: [1; 1 − M; M of each insertion].
            let m = tape.slice_cols(vars.hard, INSERT, INSERT + 1)?;
            let neg = tape.scale(m, -1.0)?;
            let one_minus = tape.add_scalar(neg, 1.0)?;
            let ins_idx: Vec<usize> = insertions.iter().map(|i| i.edge).collect();
            let one = tape.constant(Tensor::filled(&[1, 1], 1.0))?;
            let mut parts = vec![one, one_minus];
            if !ins_idx.is_empty() {
                parts.push(tape.gather_rows(m, &ins_idx)?);
            }
            let stacked = tape.concat_rows(&parts)?;
            let idx: Vec<usize> = prop
                .origin
                .iter()
                .map(|o| match *o {
                    EntryOrigin::SelfLoop => 0,
                    EntryOrigin::Edge(k) if k < m_edges => 1 + k,
                    EntryOrigin::Edge(k) => 1 + m_edges + (k - m_edges) / 2,
                })
                .collect();
            let weights = tape.gather_rows(stacked, &idx)?;
            Operator {
                matrix: Arc::new(prop.matrix),
                weights: Some(weights),
            }
        }
    };

    let inserted = if insertions.is_empty() {
        None
    } else {
        Some(inserted_rows(tape, decision, &insertions, opts)?)
    };
    Ok(AugmentedGraph {
        n_original: n,
        insertions,
        edges,
        operator,
        inserted,
    })
}

fn inserted_rows(
    tape: &mut Tape,
    decision: &InsertionDecision,
    insertions: &[Insertion],
    opts: &AugmentOptions,
) -> Result<InsertedRows> {
    let k = insertions.len();
    let idx: Vec<usize> = insertions.iter().map(|i| i.edge).collect();
    let constant = |tape: &mut Tape, v: f64| tape.constant(Tensor::filled(&[k, 1], v));
    let (coef_src, coef_dst) = match opts.init {
        InitMode::Zero => (constant(tape, 0.0)?, constant(tape, 0.0)?),
        InitMode::Mean => (constant(tape, opts.alpha)?, constant(tape, 1.0 - opts.alpha)?),
        InitMode::Adaptive => match decision.vars {
            Some(vars) => {
                let rows = tape.gather_rows(vars.soft, &idx)?;
                (tape.slice_cols(rows, 0, 1)?, tape.slice_cols(rows, 1, 2)?)
            }
            None => {
                let rows = decision.soft.gather_rows(&idx);
                let col = |c: usize| Tensor::new(vec![k, 1], (0..k).map(|r| rows.get(r, c)).collect());
                (tape.constant(col(0)?)?, tape.constant(col(1)?)?)
            }
        },
    };
    Ok(InsertedRows {
        src: insertions.iter().map(|i| i.src).collect(),
        dst: insertions.iter().map(|i| i.dst).collect(),
        coef_src,
        coef_dst,
    })
}
