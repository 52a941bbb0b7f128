use nalgebra::{DMatrix, SymmetricEigen};

use super::curve::{CurveSeries, RiskCurve};
use super::{from_na, to_na};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmoothingMode {
    /// `A^{2k} Σ`.
    Plain,
    /// `½ A^{k−1} (I + ((1−p)I + pA)²) Σ`.
    Unigap,
}

const POWER_ITERS: usize = 50;
const POWER_TOL: f64 = 1e-10;

/// Eigenpairs of a symmetric PSD `Σ`; eigenvalues slightly below zero are
/// clamped.
fn spectrum(sigma: &Tensor) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let d = sigma.rows();
    if sigma.shape() != [d, d] || d == 0 {
        return Err(Error::InvalidArgument(format!("covariance must be square, got {:?}", sigma.shape())));
    }
    if !sigma.is_finite() {
        return Err(Error::NonFinite { op: "smoothing_covariance" });
    }
    let scale = sigma.max_abs().max(1.0);
    if (0..d).any(|i| (0..i).any(|j| (sigma.get(i, j) - sigma.get(j, i)).abs() > 1e-10 * scale)) {
        return Err(Error::InvalidArgument("covariance is not symmetric".into()));
    }
    let mut eig = SymmetricEigen::new(to_na(sigma));
    let min = eig.eigenvalues.min();
    if min < -1e-8 * scale {
        return Err(Error::InvalidArgument(format!("covariance is not positive semidefinite (eigenvalue {min})")));
    }
    eig.eigenvalues.apply(|l| *l = l.max(0.0));
    Ok(eig)
}

/// Covariance after `k` rounds of smoothing with `A = (I + Σ⁻¹)⁻¹`.
///
/// `A` shares eigenvectors with `Σ` and has eigenvalues `σ/(1+σ)`, so the
/// map is evaluated spectrally; a singular `Σ` needs no regularization
/// because `σ = 0` maps to `0`.
pub fn smoothing_covariance(sigma: &Tensor, k: usize, mode: SmoothingMode, p: f64) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::InvalidArgument("smoothing needs k >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p must lie in [0, 1], got {p}")));
    }
    let eig = spectrum(sigma)?;
    let scaled = eig.eigenvalues.map(|s| {
        let a = s / (1.0 + s);
        let gain = match mode {
            SmoothingMode::Plain => a.powi(2 * k as i32),
            SmoothingMode::Unigap => 0.5 * a.powi(k as i32 - 1) * (1.0 + ((1.0 - p) + p * a).powi(2)),
        };
        gain * s
    });
    let q = &eig.eigenvectors;
    let m = q * DMatrix::from_diagonal(&scaled) * q.transpose();
    // Exact symmetry regardless of rounding in the product.
    Ok(from_na(&((&m + m.transpose()) * 0.5)))
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration, which
/// equals its spectral norm.
pub fn operator_norm(m: &Tensor) -> Result<f64> {
    let n = m.rows();
    if m.shape() != [n, n] {
        return Err(Error::InvalidArgument(format!("operator_norm needs a square matrix, got {:?}", m.shape())));
    }
    // Fixed, generic start so no eigenvector is missed by symmetry.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt().fract()).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut est = 0.0;
    for _ in 0..POWER_ITERS {
        let w: Vec<f64> = (0..n).map(|i| m.row(i).iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        let done = (nw - est).abs() <= POWER_TOL * nw;
        est = nw;
        v = w.into_iter().map(|x| x / nw).collect();
        if done {
            break;
        }
    }
    Ok(est)
}

/// Least-squares slope of `ln y` against `k`.
pub(crate) fn log_slope(ks: &[usize], ys: &[f64]) -> f64 {
    let n = ks.len() as f64;
    let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let ml = ls.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, l)| (x - mx) * (l - ml)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Operator norms of both covariance maps for `k = 1..=k_max`, with decay
/// slopes fitted over `k ∈ [k_max/2, k_max]`.
pub fn rate_check(sigma: &Tensor, k_max: usize, p: f64) -> Result<RiskCurve> {
    if k_max < 4 {
        return Err(Error::InvalidArgument(format!("rate_check needs k_max >= 4, got {k_max}")));
    }
    let ks: Vec<usize> = (1..=k_max).collect();
    let mut series = Vec::new();
    for (name, mode) in [("plain", SmoothingMode::Plain), ("unigap", SmoothingMode::Unigap)] {
        let values = ks
            .iter()
            .map(|&k| operator_norm(&smoothing_covariance(sigma, k, mode, p)?))
            .collect::<Result<Vec<f64>>>()?;
        let window = k_max / 2 - 1..k_max;
        if values[window.clone()].iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Infeasible(format!("{name} curve vanishes or overflows; no decay rate")));
        }
        let slope = log_slope(&ks[window.clone()], &values[window]);
        if !(slope < -1e-12) {
            return Err(Error::Infeasible(format!("{name} curve does not decay (slope {slope})")));
        }
        series.push(CurveSeries {
            mode: name.into(),
            values,
            slope: Some(slope),
        });
    }
    RiskCurve::new(ks, series, p)
}

/// Largest deviation over `k = 1..=k_max` between the upsampled map at
/// `p = 0` and its reduction `A^{k−1}Σ`, where `A = (Σ + I)⁻¹Σ` is formed by
/// an LU solve rather than spectrally. Relative to `max(1, max|Σ|)`.
pub fn no_insertion_reduction_error(sigma: &Tensor, k_max: usize) -> Result<f64> {
    spectrum(sigma)?;
    let s = to_na(sigma);
    let d = s.nrows();
    let a = (&s + DMatrix::identity(d, d))
        .lu()
        .solve(&s)
        .ok_or_else(|| Error::InvalidArgument("Σ + I is singular".into()))?;
    let scale = sigma.max_abs().max(1.0);
    let mut power = s.clone();
    let mut worst: f64 = 0.0;
    for k in 1..=k_max {
        let lemma = smoothing_covariance(sigma, k, SmoothingMode::Unigap, 0.0)?;
        worst = worst.max(lemma.max_abs_diff(&from_na(&power)) / scale);
        power = &a * power;
    }
    Ok(worst)
}
