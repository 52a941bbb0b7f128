//! Joint optimum of the regression and structure parameters for a linear
//! GNN whose propagation is gated per node, `Â(θ_u) = I + diag(σ(θ_u))(M − I)`
//! with `M` the closed-neighborhood mean. The gate mirrors the expected
//! one-round update under insertion, `(1−p)x_i + p·(Mx)_i`.

use std::sync::Arc;

use super::ridge::ridge_fit;
use crate::diffcore::{CsrMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphdata::row_mean_propagation;

/// `min_{θ, θ_u} 1/(2n)‖Y − H(θ_u)θ‖² + λ‖θ‖² + γ‖θ_u‖²` with
/// `H(θ_u) = Â(θ_u)^k X`.
#[derive(Clone, Debug)]
pub struct JointProblem {
    pub edges: Vec<(usize, usize)>,
    pub x: Tensor,
    pub y: Tensor,
    pub k: usize,
    pub lambda: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug)]
pub struct JointOptimum {
    pub theta: Tensor,
    pub theta_u: Tensor,
    pub iterations: usize,
    /// Norm of the reduced gradient in `θ_u` at termination.
    pub grad_norm: f64,
}

/// Norms of the two first-order conditions at a candidate optimum.
#[derive(Clone, Copy, Debug)]
pub struct StationarityResiduals {
    /// `‖−(1/n)Hᵀ(Y − Hθ̂) + 2λθ̂‖`.
    pub theta: f64,
    /// `‖(1/n)(∂H/∂θ_u)ᵀ(Y − Hθ̂)θ̂ − 2γθ_u‖`, with `∂H/∂θ_u` from central
    /// differences.
    pub theta_u: f64,
}

const MAX_ITERS: usize = 50_000;
const FD_STEP: f64 = 1e-5;

impl JointProblem {
    fn operator(&self) -> Arc<CsrMatrix> {
        Arc::new(row_mean_propagation(self.x.rows(), &self.edges, true).matrix)
    }

    fn check(&self) -> Result<()> {
        let n = self.x.rows();
        if self.y.shape() != [n, 1] {
            return Err(Error::shape("JointProblem", &[n, 1], self.y.shape()));
        }
        if !(self.lambda > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument("lambda and gamma must be positive".into()));
        }
        Ok(())
    }

    fn smoothed(&self, tape: &mut Tape, m: &Arc<CsrMatrix>, theta_u: Var) -> Result<Var> {
        let n = self.x.rows();
        let zeros = tape.constant(Tensor::zeros(&[n, 1]))?;
        let pair = tape.concat_cols(&[theta_u, zeros])?;
        let soft = tape.softmax_rows(pair)?;
        let gate = tape.slice_cols(soft, 0, 1)?;
        let mut h = tape.constant(self.x.clone())?;
        for _ in 0..self.k {
            let mh = tape.spmm(m, h)?;
            let diff = tape.sub(mh, h)?;
            let step = tape.mul_rows(diff, gate)?;
            h = tape.add(h, step)?;
        }
        Ok(h)
    }

    fn features(&self, m: &Arc<CsrMatrix>, theta_u: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let u = tape.constant(theta_u.clone())?;
        let h = self.smoothed(&mut tape, m, u)?;
        Ok(tape.value(h).clone())
    }

    /// Exact minimizer in `θ` for fixed `θ_u`: stationarity of `λ‖θ‖²`
    /// carries a factor two, so the ridge solve uses `2λ`.
    fn theta_hat(&self, h: &Tensor) -> Result<Tensor> {
        ridge_fit(h, &self.y, 2.0 * self.lambda)
    }

    /// Reduced gradient in `θ_u` with `θ` at its exact minimizer (the
    /// `θ`-derivative vanishes there, so no implicit term appears).
    fn reduced_gradient(&self, m: &Arc<CsrMatrix>, theta_u: &Tensor) -> Result<(Tensor, Tensor)> {
        let theta = self.theta_hat(&self.features(m, theta_u)?)?;
        let n = self.x.rows() as f64;
        let mut tape = Tape::new();
        let u = tape.param(theta_u.clone())?;
        let h = self.smoothed(&mut tape, m, u)?;
        let t = tape.constant(theta.clone())?;
        let pred = tape.matmul(h, t)?;
        let y = tape.constant(self.y.clone())?;
        let r = tape.sub(y, pred)?;
        let sq = tape.hadamard(r, r)?;
        let fit = tape.sum_all(sq)?;
        let fit = tape.scale(fit, 0.5 / n)?;
        let uu = tape.hadamard(u, u)?;
        let pen = tape.sum_all(uu)?;
        let pen = tape.scale(pen, self.gamma)?;
        let loss = tape.add(fit, pen)?;
        let grads = tape.backward(loss)?;
        Ok((grads.get_or_zeros(u, theta_u), theta))
    }

    /// Gradient descent with Barzilai–Borwein steps until the reduced
    /// gradient norm drops below `tol`.
    pub fn optimum(&self, tol: f64) -> Result<JointOptimum> {
        self.check()?;
        let m = self.operator();
        let n = self.x.rows();
        let mut u = Tensor::zeros(&[n, 1]);
        let (mut g, mut theta) = self.reduced_gradient(&m, &u)?;
        let mut step = 1e-1;
        for it in 0..MAX_ITERS {
            let gn = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn < tol {
                return Ok(JointOptimum {
                    theta,
                    theta_u: u,
                    iterations: it,
                    grad_norm: gn,
                });
            }
            let next = u.zip_map(&g, "optimum", |a, b| a - step * b)?;
            let (g_next, theta_next) = self.reduced_gradient(&m, &next)?;
            let s: Vec<f64> = next.data().iter().zip(u.data()).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = g_next.data().iter().zip(g.data()).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            step = if sy > 0.0 { (ss / sy).min(1e3) } else { 1e-2 };
            (u, g, theta) = (next, g_next, theta_next);
        }
        Err(Error::Infeasible(format!("joint optimum not reached within {MAX_ITERS} iterations")))
    }

    pub fn residuals(&self, opt: &JointOptimum) -> Result<StationarityResiduals> {
        self.check()?;
        let m = self.operator();
        let n = self.x.rows() as f64;
        let h = self.features(&m, &opt.theta_u)?;
        let resid = self.y.zip_map(&h.matmul(&opt.theta)?, "residuals", |a, b| a - b)?;

        let ht_r = h.transpose().matmul(&resid)?;
        let r_theta = ht_r
            .data()
            .iter()
            .zip(opt.theta.data())
            .map(|(g, t)| (-g / n + 2.0 * self.lambda * t).powi(2))
            .sum::<f64>()
            .sqrt();

        let mut r_u = 0.0;
        for j in 0..opt.theta_u.rows() {
            let shifted = |d: f64| -> Result<Tensor> {
                let mut u = opt.theta_u.clone();
                u.data_mut()[j] += d;
                self.features(&m, &u)?.matmul(&opt.theta)
            };
            let dh_theta = shifted(FD_STEP)?.zip_map(&shifted(-FD_STEP)?, "residuals", |a, b| (a - b) / (2.0 * FD_STEP))?;
            let inner: f64 = dh_theta.data().iter().zip(resid.data()).map(|(a, b)| a * b).sum();
            r_u += (inner / n - 2.0 * self.gamma * opt.theta_u.data()[j]).powi(2);
        }
        Ok(StationarityResiduals {
            theta: r_theta,
            theta_u: r_u.sqrt(),
        })
    }
}
