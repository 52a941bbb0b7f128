//! Criterion 8: smoothing rates, the insertion-free reduction and the
//! interior optimum of the empirical risk curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unigap::diffcore::Tensor;
use unigap::theory::{empirical_smoothing, no_insertion_reduction_error, rate_check, LatentSpec};
use unigap::Result;

const K_MAX: usize = 32;

/// `A Aᵀ / d` with uniform entries in `A`; positive semidefinite.
fn random_psd(d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut s = Tensor::zeros(&[d, d]);
    for i in 0..d {
        for j in 0..d {
            let v: f64 = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum();
            s.set(i, j, v / d as f64);
        }
    }
    s
}

fn ratio(sigma: &Tensor) -> Result<f64> {
    let curve = rate_check(sigma, K_MAX, 0.5)?;
    Ok(curve.slope_ratio("unigap", "plain").unwrap_or(f64::NAN))
}

pub struct TheoryOutcome {
    pub lines: Vec<String>,
    pub problems: Vec<String>,
}

pub fn theory_suite() -> Result<TheoryOutcome> {
    let mut lines = Vec::new();
    let mut problems = Vec::new();

    let mut iso = Tensor::zeros(&[6, 6]);
    for i in 0..6 {
        iso.set(i, i, 1.0);
    }
    let r = ratio(&iso)?;
    lines.push(format!("isotropic ratio {r:.4}"));
    if !(0.45..=0.55).contains(&r) {
        problems.push(format!("isotropic slope ratio {r} outside [0.45, 0.55]"));
    }

    let mut worst_identity = no_insertion_reduction_error(&iso, K_MAX)?;
    for seed in [1u64, 2, 3] {
        let sigma = random_psd(6, seed);
        let r = ratio(&sigma)?;
        lines.push(format!("psd seed {seed} ratio {r:.4}"));
        if !(0.4..=0.6).contains(&r) {
            problems.push(format!("random PSD seed {seed}: slope ratio {r} outside [0.4, 0.6]"));
        }
        worst_identity = worst_identity.max(no_insertion_reduction_error(&sigma, K_MAX)?);
    }
    lines.push(format!("p=0 reduction error {worst_identity:.1e}"));
    if !(worst_identity <= 1e-10) {
        problems.push(format!("p=0 formula deviates from its reduction by {worst_identity:e}"));
    }

    let spec = LatentSpec::default();
    let k_max = 20;
    for seed in 0..3u64 {
        let curve = empirical_smoothing(&spec.sample(seed)?, &spec, k_max, seed)?;
        let (kp, ki) = (curve.argmin("plain").unwrap_or(0), curve.argmin("inserted").unwrap_or(0));
        lines.push(format!("seed {seed} k*={kp}/{ki}"));
        for (mode, k) in [("plain", kp), ("inserted", ki)] {
            if !(0 < k && k < k_max) {
                problems.push(format!("seed {seed}: {mode} risk is minimized at the boundary k={k}"));
            }
        }
    }
    Ok(TheoryOutcome { lines, problems })
}
