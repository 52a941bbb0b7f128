//! Verb implementations. Every output except `metadata.toml` is a pure
//! function of the inputs and seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use unigap::graphdata::io::{ingest_linqs, ingest_webkb, write_atomic};
use unigap::graphdata::{edge_homophily, load_bundle, save_bundle, GraphBundle};
use unigap::theory::{empirical_smoothing, no_insertion_reduction_error, rate_check};
use unigap::training::{
    bar_chart, mean_std, sweep_layers_with, sweep_svgs, sweep_to_csv, train_unigap, ExperimentReport, InsertionRatio,
};

use crate::config::{RunConfig, TheoryConfig};
use crate::{Cli, Command, Failure, Format};

/// Largest tolerated deviation of the insertion-free smoothing formula from
/// its algebraic reduction.
const IDENTITY_TOL: f64 = 1e-10;

type CmdResult = Result<(), Failure>;

pub fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Ingest { format, seed, src, dst } => ingest(*format, *seed, src, dst),
        Command::Train { config } => train(cli, config_path(cli, config)?),
        Command::Sweep { config, layers } => sweep(cli, config_path(cli, config)?, layers.as_deref()),
        Command::Theory { spec } => theory(cli, config_path(cli, spec)?),
        Command::Analyze { runs } => analyze(cli, runs),
    }
}

fn config_path<'a>(cli: &'a Cli, positional: &'a Option<PathBuf>) -> Result<&'a Path, Failure> {
    positional
        .as_deref()
        .or(cli.config.as_deref())
        .ok_or_else(|| Failure::Usage(anyhow!("no config given; pass a path or --config")))
}

/// `--out`, then `UNIGAP_OUT`, then the config's `out`, then `runs`.
fn output_root(cli: &Cli, configured: Option<&Path>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("UNIGAP_OUT").filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Runtime)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// The only file allowed to differ between identical invocations.
fn write_metadata(dir: &Path, command: &str, started: u64) -> Result<(), Failure> {
    let text = format!(
        "command = \"{command}\"\nversion = \"{}\"\nstarted_unix = {started}\nfinished_unix = {}\n",
        env!("CARGO_PKG_VERSION"),
        unix_now()
    );
    write(&dir.join("metadata.toml"), &text)
}

fn load_dataset(path: &Path) -> Result<(PathBuf, GraphBundle), Failure> {
    let canonical = path
        .canonicalize()
        .map_err(|e| Failure::Usage(anyhow!("dataset {} not found: {e}", path.display())))?;
    if !canonical.is_dir() {
        return Err(Failure::Usage(anyhow!("dataset {} is not a bundle directory", path.display())));
    }
    let g = load_bundle(&canonical).map_err(|e| Failure::Runtime(anyhow!("loading dataset: {e}")))?;
    Ok((canonical, g))
}

fn ingest(format: Format, seed: u64, src: &Path, dst: &Path) -> CmdResult {
    if !src.is_dir() {
        return Err(Failure::Usage(anyhow!("source {} is not a directory", src.display())));
    }
    let g = match format {
        Format::Linqs => {
            let (g, skipped) = ingest_linqs(src, seed)?;
            if skipped > 0 {
                tracing::warn!(skipped, "citations to unknown ids were skipped");
            }
            g
        }
        Format::Webkb => ingest_webkb(src, seed)?,
    };
    save_bundle(&g, dst)?;
    println!(
        "nodes={} edges={} classes={} features={} homophily={:.4}",
        g.n_nodes(),
        g.n_undirected_edges(),
        g.n_classes(),
        g.n_features(),
        edge_homophily(&g)?
    );
    Ok(())
}

/// Resolved config with offset seeds and the canonical dataset path, as
/// written to `run.toml`.
fn resolve(cli: &Cli, path: &Path, layers: Option<&[usize]>) -> Result<(RunConfig, GraphBundle, PathBuf), Failure> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(l) = layers {
        if l.is_empty() || l.iter().any(|d| !(1..=8).contains(d)) {
            return Err(Failure::Usage(anyhow!("--layers must list depths within 1..=8")));
        }
        cfg.sweep.layers = l.to_vec();
    }
    let (dataset, g) = load_dataset(&cfg.dataset)?;
    cfg.dataset = dataset;
    for s in &mut cfg.seeds {
        *s = s
            .checked_add(cli.seed_offset)
            .ok_or_else(|| Failure::Usage(anyhow!("seed {s} + offset {} overflows", cli.seed_offset)))?;
    }
    let out = output_root(cli, cfg.out.as_deref());
    create_dir(&out)?;
    let resolved = toml::to_string(&cfg).map_err(|e| Failure::Runtime(e.into()))?;
    write(&out.join("run.toml"), &resolved)?;
    Ok((cfg, g, out))
}

fn train(cli: &Cli, path: &Path) -> CmdResult {
    let started = unix_now();
    let (cfg, g, out) = resolve(cli, path, None)?;
    let reports: Vec<ExperimentReport> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = unigap::training::TrainConfig { seed, ..cfg.train.clone() };
            train_unigap(&g, &run)
        })
        .collect::<Result<_, _>>()?;

    let mut summary = String::from("seed,best_epoch,val_acc,test_acc,mad,insertions\n");
    let mut accs = Vec::with_capacity(reports.len());
    for r in &reports {
        r.write_csv(&out.join(format!("report-seed-{}.csv", r.seed)))?;
        if let Some(d) = &r.best_decision {
            d.dump(&out.join(format!("insertions-seed-{}.csv", r.seed)))?;
        }
        let best = r.best().cloned().unwrap_or_default();
        accs.push(best.test_acc);
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            r.seed, best.epoch, best.val_acc, best.test_acc, best.mad, best.insertions
        );
    }
    let (mean, std) = mean_std(&accs);
    let _ = writeln!(summary, "mean,,,{mean},,");
    let _ = writeln!(summary, "std,,,{std},,");
    write(&out.join("summary.csv"), &summary)?;
    println!(
        "{} {:?}: {:.2} ± {:.2} over {} seeds",
        cfg.train.variant,
        cfg.train.model,
        100.0 * mean,
        100.0 * std,
        accs.len()
    );
    write_metadata(&out, "train", started)
}

fn sweep(cli: &Cli, path: &Path, layers: Option<&[usize]>) -> CmdResult {
    let started = unix_now();
    let (cfg, g, out) = resolve(cli, path, layers)?;
    let rows = sweep_layers_with(&g, &cfg.train, &cfg.sweep.layers, &cfg.sweep.methods, &cfg.seeds)?;
    let (acc_svg, mad_svg) = sweep_svgs(&rows);
    write(&out.join("sweep.csv"), &sweep_to_csv(&rows))?;
    write(&out.join("sweep-accuracy.svg"), &acc_svg)?;
    write(&out.join("sweep-mad.svg"), &mad_svg)?;
    for r in &rows {
        println!(
            "{:<9} L={} acc={:.4} ± {:.4} mad={:.4}",
            r.method, r.layers, r.accuracy, r.accuracy_std, r.mad
        );
    }
    write_metadata(&out, "sweep", started)
}

fn theory(cli: &Cli, path: &Path) -> CmdResult {
    let started = unix_now();
    let cfg = TheoryConfig::load(path)?;
    let out = output_root(cli, None);
    create_dir(&out)?;

    let sigma = cfg.sigma.to_dense();
    let curve = rate_check(&sigma, cfg.k_max, cfg.p)?;
    write(&out.join("rate.csv"), &curve.to_csv())?;
    write(&out.join("rate.svg"), &curve.to_svg("Smoothing of the latent covariance"))?;
    match curve.slope_ratio("unigap", "plain") {
        Some(ratio) => println!("slope ratio (inserted / plain) = {ratio:.4}"),
        None => println!("slope ratio undefined: a curve did not decay"),
    }
    let err = no_insertion_reduction_error(&sigma, cfg.k_max)?;
    println!(
        "identity check (no insertion): max error {err:.3e} {}",
        if err <= IDENTITY_TOL { "pass" } else { "FAIL" }
    );

    if let Some((spec, k_max, seeds)) = &cfg.empirical {
        let seeds: Vec<u64> = seeds.iter().map(|s| s.wrapping_add(cli.seed_offset)).collect();
        let curves = seeds
            .par_iter()
            .map(|&seed| empirical_smoothing(&spec.sample(seed)?, spec, *k_max, seed))
            .collect::<Result<Vec<_>, _>>()?;
        for (seed, c) in seeds.iter().zip(&curves) {
            write(&out.join(format!("empirical-seed-{seed}.csv")), &c.to_csv())?;
            write(
                &out.join(format!("empirical-seed-{seed}.svg")),
                &c.to_svg(&format!("Ridge risk by smoothing depth (seed {seed})")),
            )?;
            let (kp, ki) = (c.argmin("plain").unwrap_or(0), c.argmin("inserted").unwrap_or(0));
            println!("seed {seed}: k* plain={kp} inserted={ki} (k_max={k_max})");
        }
    }
    write_metadata(&out, "theory", started)
}

/// Insertions flagged in a dump written by `train`.
fn read_dump(path: &Path) -> Result<Vec<(usize, usize)>, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || Failure::Runtime(anyhow!("{}:{}: malformed insertion row", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        if f[3] == "1" {
            out.push((f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?));
        }
    }
    Ok(out)
}

fn dumps_in(dir: &Path) -> Result<Vec<(u64, PathBuf)>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::Usage(anyhow!("{}: {e}", dir.display())))?;
    let mut dumps = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::Runtime(e.into()))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(seed) = name.strip_prefix("insertions-seed-").and_then(|s| s.strip_suffix(".csv")) {
            if let Ok(seed) = seed.parse() {
                dumps.push((seed, path));
            }
        }
    }
    dumps.sort();
    Ok(dumps)
}

fn analyze(cli: &Cli, runs: &[PathBuf]) -> CmdResult {
    let started = unix_now();
    let mut csv = String::from("run,seed,intra,inter,unlabeled,intra_ratio,inter_ratio\n");
    let mut names = Vec::new();
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for dir in runs {
        let dumps = dumps_in(dir)?;
        if dumps.is_empty() {
            return Err(Failure::Usage(anyhow!(
                "{} holds no insertion dumps; train a variant that inserts nodes first",
                dir.display()
            )));
        }
        let run_toml = dir.join("run.toml");
        let table: toml::Table = std::fs::read_to_string(&run_toml)
            .map_err(|e| Failure::Usage(anyhow!("{}: {e}", run_toml.display())))?
            .parse()
            .map_err(|e: toml::de::Error| Failure::Usage(anyhow!("{}: {}", run_toml.display(), e.message())))?;
        let dataset = table
            .get("dataset")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Failure::Usage(anyhow!("{}: no dataset entry", run_toml.display())))?;
        let (_, g) = load_dataset(Path::new(dataset))?;
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());

        let mut total = InsertionRatio::default();
        for (seed, path) in &dumps {
            let pairs = read_dump(path)?;
            if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i.max(j) >= g.n_nodes()) {
                return Err(Failure::Runtime(anyhow!("{}: edge ({i}, {j}) outside the dataset", path.display())));
            }
            let r = InsertionRatio::count(pairs, g.labels());
            let _ = writeln!(
                csv,
                "{name},{seed},{},{},{},{},{}",
                r.intra,
                r.inter,
                r.unlabeled,
                r.intra_ratio(),
                r.inter_ratio()
            );
            total.intra += r.intra;
            total.inter += r.inter;
            total.unlabeled += r.unlabeled;
        }
        let _ = writeln!(
            csv,
            "{name},all,{},{},{},{},{}",
            total.intra,
            total.inter,
            total.unlabeled,
            total.intra_ratio(),
            total.inter_ratio()
        );
        println!(
            "{name}: intra={:.4} inter={:.4} over {} insertions in {} runs",
            total.intra_ratio(),
            total.inter_ratio(),
            total.intra + total.inter,
            dumps.len()
        );
        names.push(name);
        intra.push(total.intra_ratio());
        inter.push(total.inter_ratio());
    }
    let out = output_root(cli, None);
    create_dir(&out)?;
    write(&out.join("analysis.csv"), &csv)?;
    let svg = bar_chart(
        "Proportion of inserted nodes",
        "ratio",
        &names,
        &[("intra-class".to_string(), intra), ("inter-class".to_string(), inter)],
    );
    write(&out.join("analysis.svg"), &svg)?;
    write_metadata(&out, "analyze", started)
}
