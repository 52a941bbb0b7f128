//! Criterion 3: node and edge arithmetic of augmented graphs.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unigap::diffcore::Tape;
use unigap::models::ModelKind;
use unigap::upsampler::{build_augmented, halfhop_mask, AugmentOptions, InitMode};
use unigap::Result;

use crate::common::random_graph;

/// Runs `trials` random masks; returns the inserted-node total and every
/// violated invariant.
pub fn augmentation_invariants(trials: u64) -> Result<(usize, Vec<String>)> {
    let n = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut problems = Vec::new();
    let mut total_inserted = 0;
    for trial in 0..trials {
        let edges = random_graph(n, rng.gen_range(0.02..0.3), 1000 + trial);
        let p = rng.gen_range(0.0..1.0);
        let decision = halfhop_mask(edges.clone(), p, 5000 + trial, trial % 2 == 1)?;
        let kind = if trial % 3 == 0 { ModelKind::Sage } else { ModelKind::Gcn };
        let mut tape = Tape::new();
        let aug = build_augmented(&mut tape, n, &decision, &AugmentOptions::new(kind, InitMode::Mean))?;
        let k = decision.count();
        total_inserted += k;
        let mut fail = |what: String| problems.push(format!("trial {trial}: {what}"));

        if aug.n_nodes() != n + k || aug.n_inserted() != k {
            fail(format!("{} nodes for N={n}, K={k}", aug.n_nodes()));
        }
        if aug.edges.len() != edges.len() + k {
            fail(format!("{} edges for |E|={}, K={k}", aug.edges.len(), edges.len()));
        }
        let dim = aug.operator.matrix.rows();
        if dim != n + k || aug.operator.matrix.cols() != n + k {
            fail(format!("operator is {dim}x{}", aug.operator.matrix.cols()));
        }

        let mut incoming: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut outgoing: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(i, j) in &aug.edges {
            outgoing.entry(i).or_default().push(j);
            incoming.entry(j).or_default().push(i);
        }
        for ins in &aug.insertions {
            let (inc, out) = (
                incoming.get(&ins.node).cloned().unwrap_or_default(),
                outgoing.get(&ins.node).cloned().unwrap_or_default(),
            );
            if inc != [ins.src] || out != [ins.dst] {
                fail(format!("inserted node {} has in {inc:?}, out {out:?}", ins.node));
            }
            if ins.node < n || edges[ins.edge] != (ins.src, ins.dst) || !decision.mask[ins.edge] {
                fail(format!("insertion {ins:?} does not match its edge"));
            }
        }
        for v in 0..n {
            let before = edges.iter().filter(|e| e.0 == v).count();
            if outgoing.get(&v).map_or(0, Vec::len) != before {
                fail(format!("node {v} changed out-degree"));
            }
        }
        let mut original = edges.clone();
        original.sort_unstable();
        if aug.contract() != original {
            fail("contraction does not recover the original edges".into());
        }
    }
    Ok((total_inserted, problems))
}
