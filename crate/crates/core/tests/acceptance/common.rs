//! Independent finite-difference oracle and fixtures for the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unigap::diffcore::{Tape, Tensor, Var};
use unigap::Result;

pub const STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Relative error, judged absolutely once both sides are below 1e-2.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Worst relative error between reverse-mode gradients of the scalar `f`
/// and central differences, over every entry of every parameter.
pub fn grad_error<F>(params: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = ps.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };
    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    for (k, p) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], p);
        for i in 0..p.numel() {
            let mut shifted = params.to_vec();
            shifted[k].data_mut()[i] = p.data()[i] + STEP;
            let up = eval(&shifted)?;
            shifted[k].data_mut()[i] = p.data()[i] - STEP;
            let down = eval(&shifted)?;
            worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * STEP)));
        }
    }
    Ok(worst)
}

/// Scalar probe `Σ out ⊙ R` with a fixed random `R`, so no gradient entry
/// cancels by symmetry.
pub fn probe(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let r = tape.constant(uniform(&shape, seed))?;
    let p = tape.hadamard(out, r)?;
    tape.sum_all(p)
}

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

/// Symmetric directed edge list without self-loops, each pair kept with
/// probability `p`.
pub fn random_graph(n: usize, p: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
                edges.push((j, i));
            }
        }
    }
    edges.sort_unstable();
    edges
}
