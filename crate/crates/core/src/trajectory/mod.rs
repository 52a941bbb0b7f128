//! Per-layer node representation stacks ("trajectories") and the encoders
//! that condense them into one vector per node.

mod mvc;
mod pretrain;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphdata::{normalize_adjacency, normalized_laplacian, GraphBundle};
use crate::graphdata::io::write_matrix;

pub use mvc::{mvc_forward, mvc_tmm, mvc_tt, mvc_tt_detailed, MvcKind, MvcParams, TtOutput};
pub use pretrain::{pretrain_encoder, PretextConfig, PretrainedEncoder};

/// Detached `L × N × d` snapshot of per-layer representations of the
/// original nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    data: Tensor,
    norm_period: Option<usize>,
}

/// Propagation operator for parameter-free precomputation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpOperator {
    Adjacency,
    Laplacian,
}

fn normalize_rows(t: &mut Tensor) {
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Whether 1-based layer `l` is normalized under period `w`.
fn normalized_layer(l: usize, w: Option<usize>) -> bool {
    w.is_some_and(|w| w > 0 && l % w == 0)
}

impl Trajectory {
    /// Stacks per-layer `N × d` slices, normalizing rows of every slice whose
    /// 1-based index is a multiple of `norm_period`.
    pub fn from_slices(mut slices: Vec<Tensor>, norm_period: Option<usize>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidArgument("trajectory needs at least one layer".into()));
        }
        for (l, s) in slices.iter_mut().enumerate() {
            if normalized_layer(l + 1, norm_period) {
                normalize_rows(s);
            }
        }
        Ok(Self {
            data: Tensor::stack(&slices)?,
            norm_period,
        })
    }

    pub fn layers(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn norm_period(&self) -> Option<usize> {
        self.norm_period
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    /// Slice of 0-based layer `l` as an `N × d` matrix.
    pub fn slice(&self, l: usize) -> Tensor {
        self.data.slab(l)
    }

    pub fn is_zero(&self) -> bool {
        self.data.data().iter().all(|&v| v == 0.0)
    }

    /// Maps every slice through a fixed Gaussian projection to width `d`
    /// (entries `N(0, 1/d)`), then reapplies the periodic normalization.
    pub fn projected(&self, d: usize, seed: u64) -> Result<Self> {
        if d == self.dim() {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d as f64).sqrt();
        let data = (0..self.dim() * d).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let proj = Tensor::new(vec![self.dim(), d], data)?;
        let slices = (0..self.layers())
            .map(|l| self.slice(l).matmul(&proj))
            .collect::<Result<Vec<_>>>()?;
        Self::from_slices(slices, self.norm_period)
    }

    /// Writes `layer{l}.bin` per slice in the binary matrix format.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        for l in 0..self.layers() {
            write_matrix(&dir.join(format!("layer{}.bin", l + 1)), &self.slice(l))?;
        }
        Ok(())
    }
}

/// All-zero trajectory; the training loop skips insertion while it is zero.
pub fn precompute_zero(g: &GraphBundle, layers: usize, d: usize) -> Result<Trajectory> {
    let slices = vec![Tensor::zeros(&[g.n_nodes(), d]); layers];
    Trajectory::from_slices(slices, None)
}

/// Parameter-free propagation `T^(l) = S T^(l−1)` from `T^(0) = X`, with `S`
/// the normalized adjacency or Laplacian.
pub fn precompute_mp(g: &GraphBundle, layers: usize, op: MpOperator, norm_period: Option<usize>) -> Result<Trajectory> {
    let s = match op {
        MpOperator::Adjacency => normalize_adjacency(g.adjacency()),
        MpOperator::Laplacian => normalized_laplacian(g.adjacency()),
    };
    let mut slices = Vec::with_capacity(layers);
    let mut prev = g.features().clone();
    for l in 1..=layers {
        let mut next = s.matmul(&prev)?;
        if normalized_layer(l, norm_period) {
            normalize_rows(&mut next);
        }
        slices.push(next.clone());
        prev = next;
    }
    Trajectory::from_slices(slices, norm_period)
}

/// Snapshot of the first `n_original` rows of each hidden state. The values
/// are copied off the tape, so later losses cannot reach them.
pub fn collect_from_model(
    tape: &Tape,
    hidden: &[Var],
    n_original: usize,
    expected_layers: usize,
    norm_period: Option<usize>,
) -> Result<Trajectory> {
    if hidden.len() != expected_layers {
        return Err(Error::InvalidArgument(format!(
            "expected {expected_layers} hidden states, got {}",
            hidden.len()
        )));
    }
    let slices = hidden
        .iter()
        .map(|&h| {
            let v = tape.value(h);
            if v.rows() < n_original {
                return Err(Error::shape("collect_from_model", v.shape(), &[n_original, v.cols()]));
            }
            let idx: Vec<usize> = (0..n_original).collect();
            Ok(v.gather_rows(&idx))
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::from_slices(slices, norm_period)
}

#[cfg(test)]
mod tests;
