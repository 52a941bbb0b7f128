use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{collect_from_model, Trajectory};
use crate::diffcore::{Adam, AdamConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graphdata::{normalize_adjacency, GraphBundle};
use crate::models::{gnn_forward, Activation, FeatureInput, GnnConfig, GnnParams, ModelKind, Mode, Operator};

/// Masked-feature reconstruction settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretextConfig {
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of feature entries hidden from the encoder.
    pub mask_ratio: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            epochs: 50,
            lr: 1e-2,
            weight_decay: 0.0,
            mask_ratio: 0.3,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

/// GCN encoder whose head decodes back to feature space.
#[derive(Clone, Debug)]
pub struct PretrainedEncoder {
    pub params: GnnParams,
    /// Pretext loss per epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
}

/// Trains a GCN to reconstruct a fixed random subset of feature entries that
/// is hidden from its input (mean squared error over that subset; over all
/// entries when the ratio is 0).
pub fn pretrain_encoder(g: &GraphBundle, cfg: &PretextConfig) -> Result<PretrainedEncoder> {
    if !(0.0..1.0).contains(&cfg.mask_ratio) {
        return Err(Error::InvalidArgument(format!("mask ratio {} outside [0, 1)", cfg.mask_ratio)));
    }
    let gcfg = GnnConfig {
        kind: ModelKind::Gcn,
        in_dim: g.n_features(),
        hidden: cfg.hidden,
        layers: cfg.layers,
        classes: g.n_features(),
        activation: cfg.activation,
        dropout: 0.0,
    };
    let mut params = GnnParams::init(&gcfg, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    })?;
    let op = Operator::constant(normalize_adjacency(g.adjacency()));
    let x = g.features();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_9a55);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut tape = Tape::new();
    // One mask per run so successive losses measure the same objective.
    let mut mask = Tensor::filled(x.shape(), 1.0);
    let mut input = x.clone();
    if cfg.mask_ratio > 0.0 {
        for (m, v) in mask.data_mut().iter_mut().zip(input.data_mut()) {
            if rng.gen::<f64>() < cfg.mask_ratio {
                *v = 0.0;
            } else {
                *m = 0.0;
            }
        }
    }
    let count = mask.sum();
    let input = FeatureInput::sparse_from(&input);
    for epoch in 0..cfg.epochs {
        if count == 0.0 {
            losses.push(0.0);
            continue;
        }
        tape.reset();
        let bound = params.bind(&mut tape)?;
        let out = gnn_forward(
            &mut tape,
            &params,
            &bound,
            &op,
            &input,
            None,
            Mode::Eval,
        )?;
        let target = tape.constant(x.clone())?;
        let m = tape.constant(mask.clone())?;
        let diff = tape.sub(out.logits, target)?;
        let diff = tape.hadamard(diff, m)?;
        let sq = tape.hadamard(diff, diff)?;
        let total = tape.sum_all(sq)?;
        let loss = tape.scale(total, 1.0 / count)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                lr: cfg.lr,
                beta: 0.0,
                temperature: 0.0,
            });
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        let gs: Vec<Tensor> = bound
            .vars()
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect();
        adam.step(&mut params.tensors_mut(), &gs)?;
    }
    Ok(PretrainedEncoder { params, losses })
}

impl PretrainedEncoder {
    /// Hidden states of the encoder on the unmasked graph.
    pub fn trajectory(&self, g: &GraphBundle, norm_period: Option<usize>) -> Result<Trajectory> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let op = Operator::constant(normalize_adjacency(g.adjacency()));
        let out = gnn_forward(
            &mut tape,
            &self.params,
            &bound,
            &op,
            &FeatureInput::sparse_from(g.features()),
            None,
            Mode::Eval,
        )?;
        collect_from_model(&tape, &out.hidden, g.n_nodes(), self.params.config.layers, norm_period)
    }

    /// Copies encoder layers into a downstream model of matching shape,
    /// leaving its classifier head untouched. Returns how many layers were
    /// copied.
    pub fn warm_start(&self, downstream: &mut GnnParams) -> usize {
        if downstream.config.kind != ModelKind::Gcn {
            return 0;
        }
        let mut copied = 0;
        for l in 0..self.params.weights.len().min(downstream.weights.len()) {
            if downstream.weights[l].shape() == self.params.weights[l].shape() {
                downstream.weights[l] = self.params.weights[l].clone();
                downstream.biases[l] = self.params.biases[l].clone();
                copied += 1;
            }
        }
        copied
    }
}
