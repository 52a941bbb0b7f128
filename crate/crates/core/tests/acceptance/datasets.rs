//! Criteria 4 to 7 on prepared Cora and Texas bundles found under
//! `UNIGAP_DATA_DIR`. Without them these criteria cannot be judged and fail.

use std::path::PathBuf;

use rayon::prelude::*;
use unigap::graphdata::{load_bundle, GraphBundle};
use unigap::training::{mean_std, sweep_layers_with, train_unigap, ExperimentReport, InsertionRatio, TrainConfig};
use unigap::upsampler::Variant;

pub type Verdict = Result<String, String>;

pub fn bundle(name: &str) -> Result<GraphBundle, String> {
    let root = std::env::var_os("UNIGAP_DATA_DIR")
        .map(PathBuf::from)
        .ok_or_else(|| format!("dataset unavailable: UNIGAP_DATA_DIR is not set (needs {name}/)"))?;
    let dir = root.join(name);
    load_bundle(&dir).map_err(|e| format!("dataset unavailable: {}: {e}", dir.display()))
}

/// Default configuration; only the learned variant keeps the MAD reward,
/// the baseline is plain cross-entropy training.
fn runs(g: &GraphBundle, variant: Variant, seeds: u64) -> Result<Vec<ExperimentReport>, String> {
    (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let base = TrainConfig::default();
            let beta = if variant == Variant::Unigap { base.beta } else { 0.0 };
            train_unigap(g, &TrainConfig { variant, seed, beta, ..base })
        })
        .collect::<unigap::Result<Vec<_>>>()
        .map_err(|e| e.to_string())
}

fn mean_acc(reports: &[ExperimentReport]) -> (f64, f64) {
    let accs: Vec<f64> = reports.iter().map(ExperimentReport::best_test_accuracy).collect();
    mean_std(&accs)
}

/// Twenty-seed Cora runs shared by criteria 4, 5 and 7.
pub struct CoraRuns {
    pub baseline: Vec<ExperimentReport>,
    pub unigap: Vec<ExperimentReport>,
    pub seconds: f64,
}

pub fn cora_runs(g: &GraphBundle) -> Result<CoraRuns, String> {
    let start = std::time::Instant::now();
    Ok(CoraRuns {
        baseline: runs(g, Variant::Baseline, 20)?,
        unigap: runs(g, Variant::Unigap, 20)?,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn baseline(c: &CoraRuns) -> Verdict {
    let (m, s) = mean_acc(&c.baseline);
    let line = format!(
        "GCN on Cora {:.2} ± {:.2} over 20 seeds (both variants trained in {:.0}s)",
        100.0 * m,
        100.0 * s,
        c.seconds
    );
    if (0.79..=0.84).contains(&m) { Ok(line) } else { Err(format!("{line}, outside [79, 84]")) }
}

pub fn uplift(c: &CoraRuns, texas: Result<GraphBundle, String>) -> Verdict {
    let (b, _) = mean_acc(&c.baseline);
    let (u, s) = mean_acc(&c.unigap);
    let mut line = format!("Cora {:.2} -> {:.2} ± {:.2}", 100.0 * b, 100.0 * u, 100.0 * s);
    let mut ok = u - b >= 0.01;
    match texas {
        Ok(t) => {
            let (tb, _) = mean_acc(&runs(&t, Variant::Baseline, 20)?);
            let (tu, _) = mean_acc(&runs(&t, Variant::Unigap, 20)?);
            line.push_str(&format!("; Texas {:.2} -> {:.2}", 100.0 * tb, 100.0 * tu));
            ok &= tu - tb >= 0.05;
        }
        Err(e) => {
            line.push_str(&format!("; {e}"));
            ok = false;
        }
    }
    if ok { Ok(line) } else { Err(line) }
}

pub fn oversmoothing(g: &GraphBundle) -> Verdict {
    let cfg = TrainConfig::default();
    let rows = sweep_layers_with(g, &cfg, &[2, 4, 6, 8], &[Variant::Baseline, Variant::Unigap], &[0, 1, 2, 3, 4])
        .map_err(|e| e.to_string())?;
    let at = |m: Variant, l: usize| rows.iter().find(|r| r.method == m && r.layers == l).cloned();
    let (Some(b2), Some(b8), Some(u8)) = (at(Variant::Baseline, 2), at(Variant::Baseline, 8), at(Variant::Unigap, 8))
    else {
        return Err("sweep is missing rows".into());
    };
    let line = format!(
        "baseline L2 acc {:.3} mad {:.3}, L8 acc {:.3} mad {:.3}; unigap L8 acc {:.3} mad {:.3}",
        b2.accuracy, b2.mad, b8.accuracy, b8.mad, u8.accuracy, u8.mad
    );
    let ok = b8.mad < b2.mad && b8.accuracy < b2.accuracy && u8.mad > b8.mad && u8.accuracy > b8.accuracy;
    if ok { Ok(line) } else { Err(line) }
}

pub fn insertion_analysis(c: &CoraRuns, g: &GraphBundle) -> Verdict {
    let best = c
        .unigap
        .iter()
        .max_by(|a, b| a.best_test_accuracy().total_cmp(&b.best_test_accuracy()))
        .ok_or("no runs")?;
    let d = best.best_decision.as_ref().ok_or("best run inserted no nodes")?;
    let pairs = d.edges.iter().zip(&d.mask).filter(|(_, &m)| m).map(|(&e, _)| e);
    let r = InsertionRatio::count(pairs, g.labels());
    let line = format!(
        "seed {}: intra {:.3}, inter {:.3} of {} insertions",
        best.seed,
        r.intra_ratio(),
        r.inter_ratio(),
        r.intra + r.inter
    );
    if r.inter_ratio() > r.intra_ratio() { Ok(line) } else { Err(line) }
}
