use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_edges, check_head, INSERT};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::Result;

/// Edge-classifier logits from the symmetric pair features
/// `[h_i ⊙ h_j ‖ |h_i − h_j|]`; column 1 scores "inter-class".
pub fn adaedge_logits(tape: &mut Tape, hidden: Var, pairs: &[(usize, usize)], w_up: Var) -> Result<Var> {
    let (n, d) = (tape.value(hidden).rows(), tape.value(hidden).cols());
    check_edges(n, pairs, "adaedge_logits")?;
    check_head(tape, w_up, d, "adaedge_logits")?;
    let src: Vec<usize> = pairs.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = pairs.iter().map(|e| e.1).collect();
    let hs = tape.gather_rows(hidden, &src)?;
    let hd = tape.gather_rows(hidden, &dst)?;
    let prod = tape.hadamard(hs, hd)?;
    let diff = tape.sub(hs, hd)?;
    let dist = tape.abs(diff)?;
    let feats = tape.concat_cols(&[prod, dist])?;
    tape.matmul(feats, w_up)
}

/// Edge labels from current predictions: 1 when the endpoints disagree.
pub fn adaedge_targets(pred: &[usize], pairs: &[(usize, usize)]) -> Vec<i64> {
    pairs.iter().map(|&(i, j)| i64::from(pred[i] != pred[j])).collect()
}

/// Undirected pairs changed per epoch in each direction: 1% of the directed
/// edges, counted as pairs, and at least one.
pub fn adaedge_budget(n_directed: usize) -> usize {
    (n_directed / 100 / 2).max(1)
}

/// Probability the head assigns to "inter-class" for the pair `(i, j)`.
pub fn pair_inter_probability(h: &Tensor, w_up: &Tensor, i: usize, j: usize) -> f64 {
    let (a, b) = (h.row(i), h.row(j));
    let d = a.len();
    let mut z = [0.0; 2];
    for c in 0..d {
        let prod = a[c] * b[c];
        let dist = (a[c] - b[c]).abs();
        for (k, zk) in z.iter_mut().enumerate() {
            *zk += prod * w_up.get(c, k) + dist * w_up.get(d + c, k);
        }
    }
    1.0 / (1.0 + (z[1 - INSERT] - z[INSERT]).exp())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rewiring {
    /// Sorted undirected pairs `i < j` after the update.
    pub pairs: Vec<(usize, usize)>,
    pub removed: Vec<(usize, usize)>,
    pub added: Vec<(usize, usize)>,
}

/// One rewiring step on undirected pairs `i < j`: drops up to `budget` pairs
/// the head calls inter-class (most confident first) and adds up to
/// `budget` non-adjacent pairs of nodes sharing a predicted class that the
/// head calls intra-class, drawn from a seeded candidate pool.
pub fn rewire(
    pairs: &[(usize, usize)],
    h: &Tensor,
    w_up: &Tensor,
    pred: &[usize],
    budget: usize,
    seed: u64,
) -> Result<Rewiring> {
    let n = h.rows();
    check_edges(n, pairs, "rewire")?;

    let mut scored: Vec<(f64, (usize, usize))> = pairs
        .iter()
        .map(|&(i, j)| (pair_inter_probability(h, w_up, i, j), (i, j)))
        .filter(|&(p, _)| p > 0.5)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let removed: Vec<(usize, usize)> = scored.into_iter().take(budget).map(|s| s.1).collect();

    let present: HashSet<(usize, usize)> = pairs.iter().copied().collect();
    let classes = pred.iter().copied().max().map_or(0, |c| c + 1);
    let mut members = vec![Vec::new(); classes];
    for (v, &c) in pred.iter().enumerate().take(n) {
        members[c].push(v);
    }
    let nodes: Vec<usize> = (0..n).filter(|&v| members[pred[v]].len() > 1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    if !nodes.is_empty() {
        for _ in 0..20 * budget {
            let u = *nodes.choose(&mut rng).expect("nonempty");
            let v = *members[pred[u]].choose(&mut rng).expect("nonempty");
            let pair = (u.min(v), u.max(v));
            if u == v || present.contains(&pair) || !seen.insert(pair) {
                continue;
            }
            let p = pair_inter_probability(h, w_up, pair.0, pair.1);
            if p < 0.5 {
                candidates.push((p, pair));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let added: Vec<(usize, usize)> = candidates.into_iter().take(budget).map(|c| c.1).collect();

    let mut next: BTreeSet<(usize, usize)> = pairs.iter().copied().collect();
    for p in &removed {
        next.remove(p);
    }
    next.extend(added.iter().copied());
    Ok(Rewiring {
        pairs: next.into_iter().collect(),
        removed,
        added,
    })
}
