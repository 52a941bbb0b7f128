use serde::{Deserialize, Serialize};

use crate::models::{Activation, ModelKind};
use crate::trajectory::{MpOperator, MvcKind, PretextConfig};
use crate::upsampler::{InitMode, Variant};

/// Initial trajectory before the downstream model takes over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryStrategy {
    Zero,
    /// Parameter-free propagation of the input features.
    Mp,
    /// Hidden states of a GCN pretrained on feature reconstruction, which
    /// also warm-starts the downstream layers.
    Pretrained,
}

/// States whose MAD the loss rewards. Post-activation hidden states are
/// nonnegative, so maximal MAD is reachable by shrinking them to zero; at
/// `β = 1` that collapse outscores fitting the labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothTarget {
    Logits,
    Hidden,
}

mod period {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Every(usize),
        Keyword(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(w) => Repr::Every(*w),
            None => Repr::Keyword("none".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Every(w) => Ok(Some(w)),
            Repr::Keyword(k) if k == "none" => Ok(None),
            Repr::Keyword(k) => Err(serde::de::Error::custom(format!("expected a period or \"none\", got {k:?}"))),
        }
    }
}

/// `τ_e = max(min, initial · decay^e)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Temperature {
    pub initial: f64,
    pub decay: f64,
    pub min: f64,
}

impl Default for Temperature {
    fn default() -> Self {
        Self {
            initial: 1.0,
            decay: 1.0,
            min: 1.0,
        }
    }
}

impl Temperature {
    pub fn at(&self, epoch: usize) -> f64 {
        (self.initial * self.decay.powi(epoch.min(i32::MAX as usize) as i32)).max(self.min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub model: ModelKind,
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
    /// Coupled L2 penalty on every parameter.
    pub weight_decay: f64,
    pub dropout: f64,
    pub activation: Activation,
    /// Weight of the MAD reward in the loss.
    pub beta: f64,
    pub smooth_target: SmoothTarget,
    pub temperature: Temperature,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Row normalization period of trajectory slices; `None` disables it and
    /// is written as `"none"`, since an absent key means the default.
    #[serde(with = "period")]
    pub norm_period: Option<usize>,
    pub trajectory: TrajectoryStrategy,
    pub mp_operator: MpOperator,
    pub mvc: MvcKind,
    pub init_mode: InitMode,
    pub halfhop_p: f64,
    pub halfhop_alpha: f64,
    /// Share one decision between `(i, j)` and `(j, i)`.
    pub tie_reverse: bool,
    /// Scale feature rows to unit L1 norm before training.
    pub row_normalize: bool,
    /// Restrict values to the published search grid.
    pub grid: bool,
    pub pretext: PretextConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Unigap,
            model: ModelKind::Gcn,
            layers: 2,
            hidden: 64,
            lr: 1e-2,
            weight_decay: 5e-4,
            dropout: 0.5,
            activation: Activation::Relu,
            beta: 1.0,
            smooth_target: SmoothTarget::Logits,
            temperature: Temperature::default(),
            warmup_epochs: 10,
            max_epochs: 1000,
            patience: 100,
            seed: 0,
            norm_period: Some(2),
            trajectory: TrajectoryStrategy::Zero,
            mp_operator: MpOperator::Adjacency,
            mvc: MvcKind::Tmm,
            init_mode: InitMode::Adaptive,
            halfhop_p: 0.5,
            halfhop_alpha: 0.5,
            tie_reverse: false,
            row_normalize: true,
            grid: false,
            pretext: PretextConfig::default(),
        }
    }
}

pub const GRID_LR: [f64; 5] = [5e-2, 1e-2, 5e-3, 1e-3, 5e-4];
pub const GRID_HIDDEN: [usize; 5] = [16, 32, 64, 128, 256];
pub const GRID_DROPOUT: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.5, 0.8];
pub const GRID_WEIGHT_DECAY: [f64; 5] = [1e-2, 5e-3, 1e-3, 5e-4, 1e-4];
pub const GRID_LAYERS: [usize; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
pub const GRID_NORM_PERIOD: [Option<usize>; 5] = [Some(1), Some(2), Some(3), Some(4), None];
pub const GRID_HALFHOP_P: [f64; 4] = [0.0, 0.5, 0.75, 1.0];

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| (g - v).abs() <= 1e-12 * g.abs().max(1.0))
}

impl TrainConfig {
    /// Every violated constraint, so callers can report them together.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        need(self.layers >= 1, format!("layers must be at least 1 (got {})", self.layers));
        need(self.hidden >= 1, format!("hidden must be at least 1 (got {})", self.hidden));
        need(self.lr > 0.0 && self.lr.is_finite(), format!("lr must be positive (got {})", self.lr));
        need(self.weight_decay >= 0.0, format!("weight_decay must be non-negative (got {})", self.weight_decay));
        need((0.0..1.0).contains(&self.dropout), format!("dropout must lie in [0, 1) (got {})", self.dropout));
        need(self.beta >= 0.0 && self.beta.is_finite(), format!("beta must be non-negative (got {})", self.beta));
        let t = &self.temperature;
        need(
            t.initial > 0.0 && t.min > 0.0 && t.decay > 0.0 && t.decay <= 1.0,
            format!("temperature needs initial, min > 0 and decay in (0, 1] (got {t:?})"),
        );
        need(self.max_epochs >= 1, "max_epochs must be at least 1".into());
        need(self.patience >= 1, "patience must be at least 1".into());
        need(self.norm_period != Some(0), "norm_period must be positive or \"none\"".into());
        need((0.0..=1.0).contains(&self.halfhop_p), format!("halfhop_p must lie in [0, 1] (got {})", self.halfhop_p));
        need(
            (0.0..=1.0).contains(&self.halfhop_alpha),
            format!("halfhop_alpha must lie in [0, 1] (got {})", self.halfhop_alpha),
        );
        if self.mvc == MvcKind::Tt {
            need(self.hidden % 2 == 0, format!("the transformer encoder splits hidden={} into 2 heads", self.hidden));
        }
        if self.grid {
            need(on_grid(self.lr, &GRID_LR), format!("lr {} is not on the grid {GRID_LR:?}", self.lr));
            need(GRID_HIDDEN.contains(&self.hidden), format!("hidden {} is not on the grid {GRID_HIDDEN:?}", self.hidden));
            need(on_grid(self.dropout, &GRID_DROPOUT), format!("dropout {} is not on the grid {GRID_DROPOUT:?}", self.dropout));
            need(
                on_grid(self.weight_decay, &GRID_WEIGHT_DECAY),
                format!("weight_decay {} is not on the grid {GRID_WEIGHT_DECAY:?}", self.weight_decay),
            );
            need(GRID_LAYERS.contains(&self.layers), format!("layers {} is not on the grid {GRID_LAYERS:?}", self.layers));
            need(
                GRID_NORM_PERIOD.contains(&self.norm_period),
                format!("norm_period {:?} is not on the grid {{1, 2, 3, 4, none}}", self.norm_period),
            );
            need(
                on_grid(self.halfhop_p, &GRID_HALFHOP_P),
                format!("halfhop_p {} is not on the grid {GRID_HALFHOP_P:?}", self.halfhop_p),
            );
        }
        out
    }
}
