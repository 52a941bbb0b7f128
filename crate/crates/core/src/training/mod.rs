//! The co-training loop, its loss, over-smoothing metrics, reports and
//! depth sweeps.

mod config;
mod loss;
mod metrics;
mod report;
mod svg;
mod sweep;
mod train;

pub use config::{
    SmoothTarget, Temperature, TrainConfig, TrajectoryStrategy, GRID_DROPOUT, GRID_HALFHOP_P, GRID_HIDDEN, GRID_LAYERS, GRID_LR,
    GRID_NORM_PERIOD, GRID_WEIGHT_DECAY,
};
pub use loss::total_loss;
pub use metrics::{
    accuracy, analyze_insertions, argmax_rows, dirichlet_energy, mad, mad_var, InsertionRatio, MadMode,
};
pub use report::{mean_std, EpochRecord, ExperimentReport};
pub use svg::{bar_chart, line_chart, Series};
pub use sweep::{sweep_layers, sweep_layers_with, sweep_svgs, sweep_to_csv, SweepRow};
pub use train::{evaluate, plain_operator, train_unigap};
