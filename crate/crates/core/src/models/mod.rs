//! Downstream message-passing networks that expose every layer's hidden
//! state, plus the parameter-free linear GNN used by the theory checks.

mod checkpoint;
mod forward;
mod linear;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{gcn_forward, gnn_forward, sage_forward, FeatureInput, Forward, InsertedRows, Mode, Operator};
pub use linear::{linear_gnn, Aggregation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Sage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub kind: ModelKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
    pub activation: Activation,
    pub dropout: f64,
}

/// Glorot-uniform `rows × cols` matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("sized buffer")
}

/// Layer weights at constant hidden width followed by a linear classifier.
/// SAGE layers carry a second matrix for the neighbor-mean term.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams {
    pub config: GnnConfig,
    pub weights: Vec<Tensor>,
    pub neighbor_weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

/// [`GnnParams`] recorded on a tape; [`BoundGnn::vars`] follows the order of
/// [`GnnParams::tensors_mut`].
#[derive(Clone, Debug)]
pub struct BoundGnn {
    pub weights: Vec<Var>,
    pub neighbor_weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl BoundGnn {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.weights.clone();
        v.extend(&self.neighbor_weights);
        v.extend(&self.biases);
        v.push(self.head_weight);
        v.push(self.head_bias);
        v
    }
}

impl GnnParams {
    pub fn init(config: &GnnConfig, seed: u64) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || config.in_dim == 0 || config.classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "layers, hidden, in_dim and classes must be positive: {config:?}"
            )));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = |l: usize| if l == 0 { config.in_dim } else { config.hidden };
        let weights = (0..config.layers).map(|l| glorot(width(l), config.hidden, &mut rng)).collect();
        let neighbor_weights = match config.kind {
            ModelKind::Gcn => Vec::new(),
            ModelKind::Sage => (0..config.layers).map(|l| glorot(width(l), config.hidden, &mut rng)).collect(),
        };
        Ok(Self {
            config: config.clone(),
            weights,
            neighbor_weights,
            biases: vec![Tensor::zeros(&[1, config.hidden]); config.layers],
            head_weight: glorot(config.hidden, config.classes, &mut rng),
            head_bias: Tensor::zeros(&[1, config.classes]),
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundGnn> {
        let mut params = |ts: &[Tensor]| ts.iter().map(|t| tape.param(t.clone())).collect::<Result<Vec<_>>>();
        let weights = params(&self.weights)?;
        let neighbor_weights = params(&self.neighbor_weights)?;
        let biases = params(&self.biases)?;
        Ok(BoundGnn {
            weights,
            neighbor_weights,
            biases,
            head_weight: tape.param(self.head_weight.clone())?,
            head_bias: tape.param(self.head_bias.clone())?,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.weights.iter().collect();
        v.extend(&self.neighbor_weights);
        v.extend(&self.biases);
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.weights.iter_mut().collect();
        v.extend(&mut self.neighbor_weights);
        v.extend(&mut self.biases);
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }

    /// Stable names for checkpoint files, in [`GnnParams::tensors`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..self.weights.len()).map(|l| format!("layer{l}.weight")).collect();
        v.extend((0..self.neighbor_weights.len()).map(|l| format!("layer{l}.neighbor_weight")));
        v.extend((0..self.biases.len()).map(|l| format!("layer{l}.bias")));
        v.push("head.weight".into());
        v.push("head.bias".into());
        v
    }
}
