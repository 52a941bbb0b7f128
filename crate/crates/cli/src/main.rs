//! `unigap`: dataset ingestion, training runs, depth sweeps, theory checks
//! and insertion analysis.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "unigap", version, about = "Graph upsampling experiments")]
pub struct Cli {
    /// Run or theory config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Added to every configured seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed_offset: u64,
    /// Output root; overrides `UNIGAP_OUT` and the config's `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a raw dataset into a bundle directory and print its statistics.
    Ingest {
        #[arg(long, value_enum)]
        format: Format,
        /// Seed for the split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        src: PathBuf,
        dst: PathBuf,
    },
    /// Train every configured seed and summarize test accuracy.
    Train { config: Option<PathBuf> },
    /// Train each method at each depth and plot accuracy and MAD.
    Sweep {
        config: Option<PathBuf>,
        /// Depths to sweep, overriding `sweep.layers`.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
    },
    /// Smoothing-rate and risk-curve checks on the latent-space model.
    Theory { spec: Option<PathBuf> },
    /// Intra- and inter-class insertion ratios of finished train runs.
    Analyze {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    /// `*.content` and `*.cites` (Cora, Citeseer).
    Linqs,
    /// `out1_node_feature_label.txt` and `out1_graph_edges.txt` (Texas, ...).
    Webkb,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation, config or missing input: exit 2.
    Usage(anyhow::Error),
    /// Anything that goes wrong once work has started: exit 1.
    Runtime(anyhow::Error),
}

impl From<config::ConfigErrors> for Failure {
    fn from(e: config::ConfigErrors) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<unigap::Error> for Failure {
    fn from(e: unigap::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
