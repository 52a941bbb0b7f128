//! Numerical checks of the smoothing-rate analysis on the latent-space
//! random graph model: ridge regression on smoothed features, the
//! covariance maps of plain and upsampled message passing, and their
//! empirical counterparts on sampled graphs.

mod curve;
mod empirical;
mod rates;
mod ridge;
mod stationarity;


use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use curve::{CurveSeries, RiskCurve};
pub use empirical::empirical_smoothing;
pub use rates::{no_insertion_reduction_error, operator_norm, rate_check, smoothing_covariance, SmoothingMode};
pub use ridge::{ridge_fit, test_risk};
pub use stationarity::{JointOptimum, JointProblem, StationarityResiduals};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::graphdata::{random_split, synth_latent_graph, Covariance, GraphBundle, LatentGraph};

/// Parameters of the latent-space model and of the regression on top of it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSpec {
    pub sigma: Covariance,
    pub n_train: usize,
    pub n_test: usize,
    /// Ridge penalty on the regression coefficients.
    pub lambda: f64,
    /// Penalty on the structure parameters in the joint objective.
    pub gamma: f64,
    /// Weight of the MAD term; the closed-form analysis drops it.
    pub beta: f64,
    /// Insertion probability.
    pub p: f64,
    /// Target mean degree of the sampled graph.
    pub density: f64,
    /// Standard deviation of the observation noise added to features.
    pub noise: f64,
}

impl Default for LatentSpec {
    fn default() -> Self {
        LatentSpec {
            sigma: Covariance::identity(8),
            n_train: 300,
            n_test: 200,
            lambda: 1e-3,
            gamma: 0.1,
            beta: 0.0,
            p: 0.5,
            density: 10.0,
            noise: 1.0,
        }
    }
}

impl LatentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0) || !(self.beta >= 0.0) || !(self.noise >= 0.0) {
            return Err(Error::InvalidArgument("gamma, beta and noise must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidArgument(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("n_train and n_test must be positive".into()));
        }
        Ok(())
    }

    /// Samples a graph of `n_train + n_test` nodes split accordingly.
    pub fn sample(&self, seed: u64) -> Result<LatentGraph> {
        self.validate()?;
        let n = self.n_train + self.n_test;
        let mut lg = synth_latent_graph(n, &self.sigma, self.density, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let masks = random_split(n, &[self.n_train as f64 / n as f64, 0.0], &mut rng);
        let b = &lg.bundle;
        lg.bundle = GraphBundle::new(&b.directed_edges(), b.features().clone(), b.labels().to_vec(), masks)?;
        Ok(lg)
    }
}

pub(crate) fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Tensor {
    Tensor::new(vec![m.nrows(), m.ncols()], m.transpose().as_slice().to_vec()).expect("sized buffer")
}
