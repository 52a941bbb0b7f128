use nalgebra::DMatrix;

use super::{from_na, to_na};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// `θ̂ = (HᵀH/n + λI)⁻¹ HᵀY/n`, solved by Cholesky.
pub fn ridge_fit(h: &Tensor, y: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge penalty must be positive, got {lambda}")));
    }
    if h.rows() != y.rows() || h.rows() == 0 {
        return Err(Error::shape("ridge_fit", h.shape(), y.shape()));
    }
    if !h.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite { op: "ridge_fit" });
    }
    let n = h.rows() as f64;
    let hm = to_na(h);
    let gram = hm.transpose() * &hm / n + DMatrix::identity(h.cols(), h.cols()) * lambda;
    let rhs = hm.transpose() * to_na(y) / n;
    let chol = gram.cholesky().ok_or(Error::NonFinite { op: "ridge_fit" })?;
    Ok(from_na(&chol.solve(&rhs)))
}

/// `(1/n_test) ‖Y_test − H_test θ̂‖²`.
pub fn test_risk(h_test: &Tensor, theta: &Tensor, y_test: &Tensor) -> Result<f64> {
    let pred = h_test.matmul(theta)?;
    if pred.shape() != y_test.shape() {
        return Err(Error::shape("test_risk", pred.shape(), y_test.shape()));
    }
    let sse: f64 = pred.data().iter().zip(y_test.data()).map(|(a, b)| (b - a).powi(2)).sum();
    Ok(sse / h_test.rows().max(1) as f64)
}
