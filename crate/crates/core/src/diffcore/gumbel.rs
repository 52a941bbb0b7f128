use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const U_CLAMP: f64 = 1e-12;

/// Source of the Gumbel perturbation added to the logits.
#[derive(Clone, Copy, Debug)]
pub enum GumbelNoise<'a> {
    Off,
    Seeded(u64),
    /// Reuses a previously drawn noise matrix.
    Fixed(&'a Tensor),
}

#[derive(Debug)]
pub struct GumbelSample {
    /// Exactly one-hot rows; gradients pass straight through to `soft`.
    pub hard: Var,
    pub soft: Var,
    /// Noise that was added to the logits (zeros when noise is off).
    pub noise: Tensor,
}

/// Draws `rows × cols` standard Gumbel variates `−ln(−ln U)`.
pub fn gumbel_noise(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(U_CLAMP, 1.0 - U_CLAMP);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

/// One-hot selection over two columns; column 1 wins ties.
pub fn hard_indicator(soft: &Tensor) -> Tensor {
    let mut hard = Tensor::zeros(soft.shape());
    for r in 0..soft.rows() {
        let row = soft.row(r);
        let pick = usize::from(row[0] <= row[1]);
        hard.set(r, pick, 1.0);
    }
    hard
}

fn perturbed_soft(tape: &mut Tape, logits: Var, temperature: f64, noise: &Tensor) -> Result<Var> {
    let noise_var = tape.constant(noise.clone())?;
    let shifted = tape.add(logits, noise_var)?;
    let scaled = tape.scale(shifted, 1.0 / temperature)?;
    tape.softmax_rows(scaled)
}

fn check_inputs(tape: &Tape, logits: Var, temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let lv = tape.value(logits);
    if lv.cols() != 2 || !lv.is_matrix() {
        return Err(Error::shape("gumbel_softmax_st", lv.shape(), &[lv.rows(), 2]));
    }
    if !lv.is_finite() {
        return Err(Error::NonFinite { op: "gumbel_softmax_st" });
    }
    Ok(())
}

/// Straight-through Gumbel-Softmax over two-column logits.
pub fn gumbel_softmax_st(
    tape: &mut Tape,
    logits: Var,
    temperature: f64,
    noise: GumbelNoise<'_>,
) -> Result<GumbelSample> {
    check_inputs(tape, logits, temperature)?;
    let rows = tape.value(logits).rows();
    let noise = match noise {
        GumbelNoise::Off => Tensor::zeros(&[rows, 2]),
        GumbelNoise::Seeded(seed) => gumbel_noise(rows, 2, seed),
        GumbelNoise::Fixed(t) => {
            if t.shape() != [rows, 2] {
                return Err(Error::shape("gumbel_softmax_st", &[rows, 2], t.shape()));
            }
            t.clone()
        }
    };
    let soft = perturbed_soft(tape, logits, temperature, &noise)?;
    let hard_value = hard_indicator(tape.value(soft));
    let hard = tape.straight_through(soft, hard_value, None)?;
    Ok(GumbelSample { hard, soft, noise })
}

/// Variant used by finite-difference checks: the discrete choice `hard` and
/// the detached soft values `anchor` are frozen at a reference point, so the
/// forward value is `hard + soft − anchor` and matches the straight-through
/// gradient locally.
pub fn gumbel_softmax_st_frozen(
    tape: &mut Tape,
    logits: Var,
    temperature: f64,
    noise: &Tensor,
    hard: &Tensor,
    anchor: &Tensor,
) -> Result<GumbelSample> {
    check_inputs(tape, logits, temperature)?;
    let soft = perturbed_soft(tape, logits, temperature, noise)?;
    let hard_var = tape.straight_through(soft, hard.clone(), Some(anchor))?;
    Ok(GumbelSample {
        hard: hard_var,
        soft,
        noise: noise.clone(),
    })
}
