use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied directly to the parameters.
    pub weight_decay: f64,
    /// Coupled penalty `½ λ ‖w‖²` folded into the gradient before the
    /// moment estimates.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            l2: 0.0,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adaptive-moment optimizer with decoupled weight decay.
///
/// Parameters are identified by position, so callers must pass them in the
/// same order on every step.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    moments: Vec<Moments>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", config.lr)));
        }
        Ok(Self {
            config,
            moments: Vec::new(),
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        self.config.lr = lr;
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    m: vec![0.0; p.numel()],
                    v: vec![0.0; p.numel()],
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::InvalidArgument("parameter list changed between steps".into()));
        }
        for ((p, g), st) in params.iter().zip(grads).zip(&self.moments) {
            if p.shape() != g.shape() || st.m.len() != p.numel() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            l2,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), st) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            for (((w, &gv), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                let gv = gv + l2 * *w;
                *m = beta1 * *m + (1.0 - beta1) * gv;
                *v = beta2 * *v + (1.0 - beta2) * gv * gv;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *w -= lr * (update + weight_decay * *w);
            }
        }
        Ok(())
    }
}
