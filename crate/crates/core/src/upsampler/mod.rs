//! Learned edge upsampling: per-edge insertion logits, a straight-through
//! insertion mask, the augmented graph with one new node on every selected
//! directed edge, and the randomized and rewiring variants.

mod adaedge;
mod augment;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{gumbel_softmax_st, GumbelNoise, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphdata::io::write_atomic;
use crate::models::glorot;

pub use adaedge::{adaedge_budget, adaedge_logits, adaedge_targets, pair_inter_probability, rewire, Rewiring};
pub use augment::{build_augmented, AugmentOptions, AugmentedGraph, InitMode, Insertion};

/// Column of the logits and probabilities that means "insert".
pub const INSERT: usize = 1;

/// Edge scoring head. Stored as `2d × 2` so that a row of pair features
/// multiplies it directly; column 0 scores "keep", column 1 "insert".
#[derive(Clone, Debug, PartialEq)]
pub struct UpsamplerParams {
    pub w_up: Tensor,
}

impl UpsamplerParams {
    pub fn init(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w_up: glorot(2 * d, 2, &mut rng),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w_up: Tensor::zeros(&[2 * d, 2]),
        }
    }

    /// Width `d` of the node vectors the head expects.
    pub fn dim(&self) -> usize {
        self.w_up.rows() / 2
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Var> {
        tape.param(self.w_up.clone())
    }
}

fn check_edges(n: usize, edges: &[(usize, usize)], op: &str) -> Result<()> {
    match edges.iter().find(|&&(i, j)| i >= n || j >= n) {
        Some(&(i, j)) => Err(Error::InvalidArgument(format!("{op}: edge ({i}, {j}) outside {n} nodes"))),
        None => Ok(()),
    }
}

fn check_head(tape: &Tape, w_up: Var, d: usize, op: &'static str) -> Result<()> {
    let shape = tape.shape(w_up);
    if shape != [2 * d, 2] {
        return Err(Error::shape(op, shape, &[2 * d, 2]));
    }
    Ok(())
}

/// Logits `[T̂_i ‖ T̂_j] W_up` for every ordered pair; `(i, j)` and `(j, i)`
/// get independent rows.
pub fn edge_logits(tape: &mut Tape, condensed: Var, edges: &[(usize, usize)], w_up: Var) -> Result<Var> {
    let (n, d) = (tape.value(condensed).rows(), tape.value(condensed).cols());
    check_edges(n, edges, "edge_logits")?;
    check_head(tape, w_up, d, "edge_logits")?;
    let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let xs = tape.gather_rows(condensed, &src)?;
    let xd = tape.gather_rows(condensed, &dst)?;
    let pair = tape.concat_cols(&[xs, xd])?;
    tape.matmul(pair, w_up)
}

/// Differentiable handles of a sampled decision.
#[derive(Clone, Copy, Debug)]
pub struct DecisionVars {
    /// `|ℰ| × 2` perturbed softmax.
    pub soft: Var,
    /// `|ℰ| × 2` one-hot rows with straight-through gradients.
    pub hard: Var,
}

/// Per-edge insertion choice over a directed edge list.
#[derive(Clone, Debug)]
pub struct InsertionDecision {
    pub edges: Vec<(usize, usize)>,
    pub logits: Tensor,
    /// Rows sum to one; column [`INSERT`] is the insertion probability.
    pub soft: Tensor,
    pub mask: Vec<bool>,
    /// Present only when the decision came from learned logits.
    pub vars: Option<DecisionVars>,
}

impl InsertionDecision {
    /// Keeps every edge.
    pub fn none(edges: Vec<(usize, usize)>) -> Self {
        let m = edges.len();
        let mut soft = Tensor::zeros(&[m, 2]);
        for r in 0..m {
            soft.set(r, 0, 1.0);
        }
        Self {
            logits: Tensor::zeros(&[m, 2]),
            soft,
            mask: vec![false; m],
            edges,
            vars: None,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Writes `src,dst,p_insert,mask` per edge.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut out = String::from("src,dst,p_insert,mask\n");
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let _ = writeln!(out, "{i},{j},{},{}", self.soft.get(e, INSERT), u8::from(self.mask[e]));
        }
        write_atomic(path, out.as_bytes())
    }
}

/// For every edge, the index whose decision it shares under reverse tying:
/// `(i, j)` with `i > j` defers to `(j, i)` when that edge exists.
pub fn reverse_representatives(edges: &[(usize, usize)]) -> Vec<usize> {
    let index: HashMap<(usize, usize), usize> = edges.iter().enumerate().map(|(e, &p)| (p, e)).collect();
    edges
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| if i > j { index.get(&(j, i)).copied().unwrap_or(e) } else { e })
        .collect()
}

/// Straight-through Gumbel-Softmax decision per edge. The mask is the hard
/// indicator of the perturbed probabilities.
pub fn sample_mask(
    tape: &mut Tape,
    logits: Var,
    edges: Vec<(usize, usize)>,
    temperature: f64,
    noise: GumbelNoise<'_>,
    tie_reverse: bool,
) -> Result<InsertionDecision> {
    if tape.value(logits).rows() != edges.len() {
        return Err(Error::shape("sample_mask", tape.shape(logits), &[edges.len(), 2]));
    }
    let sample = gumbel_softmax_st(tape, logits, temperature, noise)?;
    let (mut soft, mut hard) = (sample.soft, sample.hard);
    if tie_reverse {
        let reps = reverse_representatives(&edges);
        soft = tape.gather_rows(soft, &reps)?;
        hard = tape.gather_rows(hard, &reps)?;
    }
    let mask = (0..edges.len()).map(|e| tape.value(hard).get(e, INSERT) == 1.0).collect();
    Ok(InsertionDecision {
        logits: tape.value(logits).clone(),
        soft: tape.value(soft).clone(),
        mask,
        edges,
        vars: Some(DecisionVars { soft, hard }),
    })
}

/// Inserts on each directed edge independently with probability `p`.
pub fn halfhop_mask(edges: Vec<(usize, usize)>, p: f64, seed: u64, tie_reverse: bool) -> Result<InsertionDecision> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("insertion probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask: Vec<bool> = (0..edges.len()).map(|_| rng.gen::<f64>() < p).collect();
    if tie_reverse {
        let reps = reverse_representatives(&edges);
        mask = reps.iter().map(|&r| mask[r]).collect();
    }
    let m = edges.len();
    let mut soft = Tensor::zeros(&[m, 2]);
    for r in 0..m {
        soft.set(r, 0, 1.0 - p);
        soft.set(r, INSERT, p);
    }
    Ok(InsertionDecision {
        logits: soft.clone(),
        soft,
        mask,
        edges,
        vars: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plain downstream training on the original graph.
    Baseline,
    Unigap,
    Halfhop,
    Adaedge,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Halfhop, Variant::Adaedge, Variant::Unigap];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Unigap => "unigap",
            Variant::Halfhop => "halfhop",
            Variant::Adaedge => "adaedge",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// How a variant chooses the edges it acts on each epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    None,
    /// Learned logits through the straight-through mask.
    Learned,
    /// Independent coin flips.
    Random,
    /// Drop predicted inter-class edges, add predicted intra-class pairs.
    Rewire,
}

/// Which stages of the pipeline a variant runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pipeline {
    pub variant: Variant,
    pub trajectory: bool,
    pub mvc: bool,
    pub sampler: Sampler,
    /// AdaEdge keeps only the last downstream layer in its trajectory.
    pub last_layer_only: bool,
}

pub fn configure_variant(name: &str) -> Result<Pipeline> {
    let variant: Variant = name.parse()?;
    Ok(match variant {
        Variant::Baseline => Pipeline {
            variant,
            trajectory: false,
            mvc: false,
            sampler: Sampler::None,
            last_layer_only: false,
        },
        Variant::Unigap => Pipeline {
            variant,
            trajectory: true,
            mvc: true,
            sampler: Sampler::Learned,
            last_layer_only: false,
        },
        Variant::Halfhop => Pipeline {
            variant,
            trajectory: false,
            mvc: false,
            sampler: Sampler::Random,
            last_layer_only: false,
        },
        Variant::Adaedge => Pipeline {
            variant,
            trajectory: true,
            mvc: false,
            sampler: Sampler::Rewire,
            last_layer_only: true,
        },
    })
}
