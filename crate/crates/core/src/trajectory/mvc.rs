use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::glorot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MvcKind {
    /// Hop-softmax mixing followed by channel mixing.
    Tmm,
    /// One self-attention block over the hop sequence with attention readout.
    Tt,
}

/// Condensation encoder weights.
///
/// TMM tensors: `w_traj` (`d × 1`, the transposed mixing row), `W_channel`
/// (`d × d`). TT tensors: hop embeddings (`L × d`), `W_q`, `W_k`, `W_v`,
/// `W_o` (`d × d`), feed-forward `W_1` (`d × 2d`), `b_1`, `W_2` (`2d × d`),
/// `b_2`, readout query (`d × 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct MvcParams {
    pub kind: MvcKind,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    tensors: Vec<Tensor>,
}

const TT_HOP: usize = 0;
const TT_Q: usize = 1;
const TT_K: usize = 2;
const TT_V: usize = 3;
const TT_O: usize = 4;
const TT_W1: usize = 5;
const TT_B1: usize = 6;
const TT_W2: usize = 7;
const TT_B2: usize = 8;
const TT_QUERY: usize = 9;

impl MvcParams {
    pub fn init(kind: MvcKind, layers: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::with_heads(kind, layers, dim, 2, seed)
    }

    pub fn with_heads(kind: MvcKind, layers: usize, dim: usize, heads: usize, seed: u64) -> Result<Self> {
        if layers == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!("encoder needs L >= 1 and d >= 1 (got {layers}, {dim})")));
        }
        if kind == MvcKind::Tt && (heads == 0 || dim % heads != 0) {
            return Err(Error::InvalidArgument(format!("width {dim} is not divisible into {heads} heads")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = match kind {
            MvcKind::Tmm => vec![glorot(dim, 1, &mut rng), glorot(dim, dim, &mut rng)],
            MvcKind::Tt => vec![
                glorot(layers, dim, &mut rng).map(|v| 0.1 * v),
                glorot(dim, dim, &mut rng),
                glorot(dim, dim, &mut rng),
                glorot(dim, dim, &mut rng),
                glorot(dim, dim, &mut rng),
                glorot(dim, 2 * dim, &mut rng),
                Tensor::zeros(&[1, 2 * dim]),
                glorot(2 * dim, dim, &mut rng),
                Tensor::zeros(&[1, dim]),
                glorot(dim, 1, &mut rng),
            ],
        };
        Ok(Self {
            kind,
            layers,
            dim,
            heads,
            tensors,
        })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    fn check(&self, t: &Trajectory, vars: &[Var]) -> Result<()> {
        if t.layers() != self.layers || t.dim() != self.dim {
            return Err(Error::shape(
                "mvc",
                &[t.layers(), t.n_nodes(), t.dim()],
                &[self.layers, t.n_nodes(), self.dim],
            ));
        }
        if vars.len() != self.tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "encoder expects {} bound tensors, got {}",
                self.tensors.len(),
                vars.len()
            )));
        }
        Ok(())
    }
}

fn slices(tape: &mut Tape, t: &Trajectory) -> Result<Vec<Var>> {
    (0..t.layers()).map(|l| tape.constant(t.slice(l))).collect()
}

/// Softmax across a list of `N × 1` score columns, returned as `N × L`.
fn hop_softmax(tape: &mut Tape, scores: &[Var]) -> Result<Var> {
    let s = tape.concat_cols(scores)?;
    tape.softmax_rows(s)
}

/// `Σ_l weights[:, l] ⊙ tokens[l]`.
fn weighted_sum(tape: &mut Tape, weights: Var, tokens: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (l, &tok) in tokens.iter().enumerate() {
        let w = tape.slice_cols(weights, l, l + 1)?;
        let term = tape.mul_rows(tok, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("empty token sequence".into()))
}

/// Hop weights `softmax_l(T^(l) w_traj)` per node, weighted sum over hops,
/// then channel mixing by `W_channel`.
pub fn mvc_tmm(tape: &mut Tape, t: &Trajectory, p: &MvcParams, vars: &[Var]) -> Result<Var> {
    if p.kind != MvcKind::Tmm {
        return Err(Error::InvalidArgument("mvc_tmm called with transformer weights".into()));
    }
    p.check(t, vars)?;
    let tokens = slices(tape, t)?;
    let scores = tokens
        .iter()
        .map(|&tok| tape.matmul(tok, vars[0]))
        .collect::<Result<Vec<_>>>()?;
    let weights = hop_softmax(tape, &scores)?;
    let mixed = weighted_sum(tape, weights, &tokens)?;
    tape.matmul(mixed, vars[1])
}

/// Transformer encoding with its attention maps exposed for inspection.
#[derive(Clone, Debug)]
pub struct TtOutput {
    pub output: Var,
    /// `attention[h][l]`: `N × L` weights of query hop `l` in head `h`.
    pub attention: Vec<Vec<Var>>,
    /// `N × L` readout weights.
    pub readout: Var,
}

/// Per node, the `L` hop vectors plus hop embeddings form a token sequence
/// passed through multi-head self-attention and a feed-forward block (both
/// residual); a learned query then attends over the tokens.
pub fn mvc_tt_detailed(tape: &mut Tape, t: &Trajectory, p: &MvcParams, vars: &[Var]) -> Result<TtOutput> {
    if p.kind != MvcKind::Tt {
        return Err(Error::InvalidArgument("mvc_tt called with mixer weights".into()));
    }
    p.check(t, vars)?;
    let (layers, dh) = (t.layers(), p.dim / p.heads);
    let raw = slices(tape, t)?;
    let mut tokens = Vec::with_capacity(layers);
    for (l, &r) in raw.iter().enumerate() {
        let emb = tape.gather_rows(vars[TT_HOP], &[l])?;
        tokens.push(tape.add_row(r, emb)?);
    }
    let project = |tape: &mut Tape, w: usize| -> Result<Vec<Var>> {
        tokens.iter().map(|&x| tape.matmul(x, vars[w])).collect()
    };
    let (q, k, v) = (project(tape, TT_Q)?, project(tape, TT_K)?, project(tape, TT_V)?);

    let scale = 1.0 / (dh as f64).sqrt();
    let mut attention = Vec::with_capacity(p.heads);
    let mut head_outputs: Vec<Vec<Var>> = vec![Vec::with_capacity(p.heads); layers];
    for h in 0..p.heads {
        let cut = |tape: &mut Tape, xs: &[Var]| -> Result<Vec<Var>> {
            xs.iter().map(|&x| tape.slice_cols(x, h * dh, (h + 1) * dh)).collect()
        };
        let (qh, kh, vh) = (cut(tape, &q)?, cut(tape, &k)?, cut(tape, &v)?);
        let mut maps = Vec::with_capacity(layers);
        for l in 0..layers {
            let scores = kh
                .iter()
                .map(|&km| {
                    let s = tape.row_dot(qh[l], km)?;
                    tape.scale(s, scale)
                })
                .collect::<Result<Vec<_>>>()?;
            let weights = hop_softmax(tape, &scores)?;
            head_outputs[l].push(weighted_sum(tape, weights, &vh)?);
            maps.push(weights);
        }
        attention.push(maps);
    }

    let mut encoded = Vec::with_capacity(layers);
    for l in 0..layers {
        let heads = tape.concat_cols(&head_outputs[l])?;
        let attn = tape.matmul(heads, vars[TT_O])?;
        let y = tape.add(tokens[l], attn)?;
        let hidden = tape.matmul(y, vars[TT_W1])?;
        let hidden = tape.add_row(hidden, vars[TT_B1])?;
        let hidden = tape.relu(hidden)?;
        let ff = tape.matmul(hidden, vars[TT_W2])?;
        let ff = tape.add_row(ff, vars[TT_B2])?;
        encoded.push(tape.add(y, ff)?);
    }

    let scores = encoded
        .iter()
        .map(|&z| tape.matmul(z, vars[TT_QUERY]))
        .collect::<Result<Vec<_>>>()?;
    let readout = hop_softmax(tape, &scores)?;
    let output = weighted_sum(tape, readout, &encoded)?;
    Ok(TtOutput {
        output,
        attention,
        readout,
    })
}

pub fn mvc_tt(tape: &mut Tape, t: &Trajectory, p: &MvcParams, vars: &[Var]) -> Result<Var> {
    Ok(mvc_tt_detailed(tape, t, p, vars)?.output)
}

/// Dispatches on the encoder kind.
pub fn mvc_forward(tape: &mut Tape, t: &Trajectory, p: &MvcParams, vars: &[Var]) -> Result<Var> {
    match p.kind {
        MvcKind::Tmm => mvc_tmm(tape, t, p, vars),
        MvcKind::Tt => mvc_tt(tape, t, p, vars),
    }
}
