use super::metrics::{mad_var, MadMode};
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// Masked cross-entropy minus `β` times the edge-normalized MAD of `hidden`
/// over `edges`. Rewarding MAD pushes neighboring states apart.
pub fn total_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[i64],
    mask: &[bool],
    hidden: Var,
    edges: &[(usize, usize)],
    beta: f64,
) -> Result<Var> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be non-negative, got {beta}")));
    }
    let ce = tape.masked_cross_entropy(logits, labels, mask)?;
    if beta == 0.0 {
        return Ok(ce);
    }
    let m = mad_var(tape, hidden, edges, MadMode::PerEdge)?;
    let reward = tape.scale(m, -beta)?;
    tape.add(ce, reward)
}
