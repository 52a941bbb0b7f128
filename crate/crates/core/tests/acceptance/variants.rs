//! Criterion 9: the heuristic variants behave as their definitions say.

use unigap::graphdata::{edge_homophily_of, sbm, SbmSpec};
use unigap::training::{train_unigap, TrainConfig};
use unigap::upsampler::{halfhop_mask, Variant};
use unigap::Result;

use crate::common::random_graph;

fn quick(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        variant,
        hidden: 16,
        max_epochs: 40,
        patience: 40,
        warmup_epochs: 5,
        row_normalize: false,
        seed,
        ..TrainConfig::default()
    }
}

pub fn variant_suite() -> Result<(Vec<String>, Vec<String>)> {
    let mut lines = Vec::new();
    let mut problems = Vec::new();

    // Halfhop with p = 0 against plain training, MAD reward on for both.
    let g = sbm(
        &SbmSpec {
            block_sizes: vec![30, 30],
            p_in: 0.15,
            p_out: 0.05,
            n_features: 8,
            signal: 1.0,
        },
        5,
    )?;
    let mut worst_gap: f64 = 0.0;
    for seed in [1u64, 2, 3] {
        let plain = train_unigap(&g, &TrainConfig { beta: 0.3, ..quick(Variant::Baseline, seed) })?;
        let hop = train_unigap(
            &g,
            &TrainConfig {
                beta: 0.3,
                halfhop_p: 0.0,
                ..quick(Variant::Halfhop, seed)
            },
        )?;
        if plain.epochs.len() != hop.epochs.len() {
            problems.push(format!("seed {seed}: runs stopped at different epochs"));
        }
        for (a, b) in plain.epochs.iter().zip(&hop.epochs) {
            worst_gap = worst_gap.max((a.loss - b.loss).abs());
        }
    }
    lines.push(format!("p=0 loss gap {worst_gap:.1e}"));
    if !(worst_gap <= 1e-9) {
        problems.push(format!("halfhop p=0 loss differs from plain training by {worst_gap:e}"));
    }

    // Insertion counts at p = 0.5 against Binomial(|E|, p).
    let edges = random_graph(80, 0.3, 900);
    let m = edges.len() as f64;
    let (mean, sd) = (0.5 * m, (m * 0.25).sqrt());
    let mut worst_z: f64 = 0.0;
    for seed in 0..20u64 {
        let count = halfhop_mask(edges.clone(), 0.5, seed, false)?.count() as f64;
        worst_z = worst_z.max((count - mean).abs() / sd);
    }
    lines.push(format!("binomial max |z| {worst_z:.2} over 20 draws of {m} edges"));
    if worst_z > 3.0 {
        problems.push(format!("halfhop count deviates by {worst_z:.2} standard deviations"));
    }

    // Rewiring after warmup: ten epochs of edits on a two-class SBM.
    let g = sbm(
        &SbmSpec {
            block_sizes: vec![100, 100],
            p_in: 0.05,
            p_out: 0.01,
            n_features: 8,
            signal: 3.0,
        },
        17,
    )?;
    let before = edge_homophily_of(&g.directed_edges(), g.labels())?;
    let cfg = TrainConfig {
        warmup_epochs: 30,
        beta: 0.0,
        ..quick(Variant::Adaedge, 4)
    };
    let report = train_unigap(&g, &cfg)?;
    let after = edge_homophily_of(&report.final_edges, g.labels())?;
    lines.push(format!("homophily {before:.3} -> {after:.3}"));
    if report.epochs.len() != cfg.max_epochs || cfg.max_epochs - cfg.warmup_epochs > 10 {
        problems.push("rewiring did not run for exactly the ten post-warmup epochs".into());
    }
    if !(after > before) {
        problems.push(format!("rewiring lowered edge homophily from {before} to {after}"));
    }
    Ok((lines, problems))
}
