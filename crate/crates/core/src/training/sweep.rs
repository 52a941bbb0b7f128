use std::fmt::Write as _;

use rayon::prelude::*;

use super::config::{TrainConfig, GRID_LAYERS};
use super::report::mean_std;
use super::svg::{line_chart, Series};
use super::train::train_unigap;
use crate::error::{Error, Result};
use crate::graphdata::GraphBundle;
use crate::upsampler::Variant;

/// Best-validation-epoch results of one method at one depth, averaged over
/// seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: Variant,
    pub layers: usize,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub mad: f64,
    pub seeds: usize,
}

/// Every method at every depth with the configured seed.
pub fn sweep_layers(g: &GraphBundle, cfg: &TrainConfig, layers: &[usize]) -> Result<Vec<SweepRow>> {
    sweep_layers_with(g, cfg, layers, &Variant::ALL, &[cfg.seed])
}

/// Trains each `(method, depth, seed)` independently in parallel. Only
/// the learned variant keeps the MAD reward; the others train with `β = 0`.
pub fn sweep_layers_with(
    g: &GraphBundle,
    cfg: &TrainConfig,
    layers: &[usize],
    methods: &[Variant],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if let Some(bad) = layers.iter().find(|l| !GRID_LAYERS.contains(l)) {
        return Err(Error::InvalidArgument(format!("depth {bad} outside 1..=8")));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one seed".into()));
    }
    let jobs: Vec<(Variant, usize, u64)> = methods
        .iter()
        .flat_map(|&m| layers.iter().flat_map(move |&l| seeds.iter().map(move |&s| (m, l, s))))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(method, l, seed)| {
            let run = TrainConfig {
                variant: method,
                layers: l,
                seed,
                beta: if method == Variant::Unigap { cfg.beta } else { 0.0 },
                ..cfg.clone()
            };
            let report = train_unigap(g, &run)?;
            let best = report.best().cloned().unwrap_or_default();
            Ok((best.test_acc, best.mad))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(results
        .chunks(seeds.len())
        .zip(jobs.chunks(seeds.len()))
        .map(|(res, job)| {
            let accs: Vec<f64> = res.iter().map(|r| r.0).collect();
            let mads: Vec<f64> = res.iter().map(|r| r.1).collect();
            let (accuracy, accuracy_std) = mean_std(&accs);
            SweepRow {
                method: job[0].0,
                layers: job[0].1,
                accuracy,
                accuracy_std,
                mad: mean_std(&mads).0,
                seeds: seeds.len(),
            }
        })
        .collect())
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("method,layers,accuracy,accuracy_std,mad,seeds\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.method, r.layers, r.accuracy, r.accuracy_std, r.mad, r.seeds);
    }
    out
}

/// Accuracy-versus-depth and MAD-versus-depth charts, one series per method.
pub fn sweep_svgs(rows: &[SweepRow]) -> (String, String) {
    let mut methods: Vec<Variant> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let series = |f: fn(&SweepRow) -> f64| -> Vec<Series> {
        methods
            .iter()
            .map(|&m| Series {
                name: m.to_string(),
                points: rows.iter().filter(|r| r.method == m).map(|r| (r.layers as f64, f(r))).collect(),
            })
            .collect()
    };
    (
        line_chart("Test accuracy by depth", "layers", "accuracy", &series(|r| r.accuracy)),
        line_chart("MAD by depth", "layers", "MAD", &series(|r| r.mad)),
    )
}
