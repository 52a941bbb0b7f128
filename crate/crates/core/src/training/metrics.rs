use serde::{Deserialize, Serialize};

use crate::diffcore::{CsrMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::upsampler::AugmentedGraph;

/// Normalizer of the summed cosine distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MadMode {
    /// Divide by the node count.
    Literal,
    /// Divide by the directed edge count.
    PerEdge,
}

fn mad_denominator(n: usize, m: usize, mode: MadMode) -> f64 {
    match mode {
        MadMode::Literal => n.max(1) as f64,
        MadMode::PerEdge => m.max(1) as f64,
    }
}

/// Summed `1 − cos(X_i, X_j)` over directed edges, normalized per `mode`.
/// A zero row has cosine distance 1 to everything.
pub fn mad(x: &Tensor, edges: &[(usize, usize)], mode: MadMode) -> f64 {
    let norms: Vec<f64> = (0..x.rows())
        .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let total: f64 = edges
        .iter()
        .map(|&(i, j)| {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                return 1.0;
            }
            let dot: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            1.0 - dot / (norms[i] * norms[j])
        })
        .sum();
    total / mad_denominator(x.rows(), edges.len(), mode)
}

/// Differentiable [`mad`].
pub fn mad_var(tape: &mut Tape, x: Var, edges: &[(usize, usize)], mode: MadMode) -> Result<Var> {
    let n = tape.value(x).rows();
    let denom = mad_denominator(n, edges.len(), mode);
    if edges.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let unit = tape.row_l2_normalize(x)?;
    let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let a = tape.gather_rows(unit, &src)?;
    let b = tape.gather_rows(unit, &dst)?;
    let cos = tape.row_dot(a, b)?;
    let sum = tape.sum_all(cos)?;
    let neg = tape.scale(sum, -1.0 / denom)?;
    tape.add_scalar(neg, edges.len() as f64 / denom)
}

/// `trace(Xᵀ L X) / N`.
pub fn dirichlet_energy(x: &Tensor, laplacian: &CsrMatrix) -> Result<f64> {
    if laplacian.rows() != laplacian.cols() || laplacian.rows() != x.rows() {
        return Err(Error::shape("dirichlet_energy", &[laplacian.rows(), laplacian.cols()], x.shape()));
    }
    let lx = laplacian.matmul(x)?;
    let trace: f64 = x.data().iter().zip(lx.data()).map(|(a, b)| a * b).sum();
    Ok(trace / x.rows().max(1) as f64)
}

/// Row-wise argmax; the lowest index wins ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            (1..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
        })
        .collect()
}

/// Fraction of masked rows whose argmax equals the label. Rows beyond the
/// mask (inserted nodes) are ignored.
pub fn accuracy(logits: &Tensor, labels: &[i64], mask: &[bool]) -> Result<f64> {
    let pred = argmax_rows(logits);
    let mut total = 0usize;
    let mut correct = 0usize;
    for (i, (&m, &y)) in mask.iter().zip(labels).enumerate() {
        if m {
            total += 1;
            correct += usize::from(y >= 0 && pred.get(i) == Some(&(y as usize)));
        }
    }
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(correct as f64 / total as f64)
}

/// Insertions split by whether their endpoints share a label.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InsertionRatio {
    pub intra: usize,
    pub inter: usize,
    /// Insertions with an unlabeled endpoint; excluded from the ratios.
    pub unlabeled: usize,
}

impl InsertionRatio {
    pub fn count(src_dst: impl IntoIterator<Item = (usize, usize)>, labels: &[i64]) -> Self {
        let mut r = Self::default();
        for (i, j) in src_dst {
            match (labels[i], labels[j]) {
                (a, b) if a < 0 || b < 0 => r.unlabeled += 1,
                (a, b) if a == b => r.intra += 1,
                _ => r.inter += 1,
            }
        }
        r
    }

    /// False when no labeled insertions exist; the ratios are then `(0, 0)`.
    pub fn defined(&self) -> bool {
        self.intra + self.inter > 0
    }

    pub fn intra_ratio(&self) -> f64 {
        if self.defined() {
            self.intra as f64 / (self.intra + self.inter) as f64
        } else {
            0.0
        }
    }

    pub fn inter_ratio(&self) -> f64 {
        if self.defined() {
            self.inter as f64 / (self.intra + self.inter) as f64
        } else {
            0.0
        }
    }
}

pub fn analyze_insertions(aug: &AugmentedGraph, labels: &[i64]) -> InsertionRatio {
    InsertionRatio::count(aug.insertions.iter().map(|i| (i.src, i.dst)), labels)
}
