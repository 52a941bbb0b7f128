//! Run and theory configuration files. Every schema violation is collected
//! before anything runs, so one invocation reports all of them.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use unigap::graphdata::Covariance;
use unigap::theory::LatentSpec;
use unigap::training::TrainConfig;
use unigap::upsampler::Variant;

/// Problems that make a config unusable; reported together.
#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration ({} problem{}):", self.0.len(), if self.0.len() == 1 { "" } else { "s" })?;
        for p in &self.0 {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn read_table(path: &Path) -> Result<toml::Table, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
    text.parse::<toml::Table>()
        .map_err(|e| ConfigErrors(vec![format!("{}: {}", path.display(), e.message())]))
}

/// Deserializes `table` as `T`, checking each key on its own first so that
/// unknown keys and type errors are all listed. The value built from the
/// remaining valid keys is still returned so semantic checks can run too.
fn parse_keys<T: DeserializeOwned>(table: &toml::Table, prefix: &str, errors: &mut Vec<String>) -> Option<T> {
    let mut valid = toml::Table::new();
    for (key, value) in table {
        let mut single = toml::Table::new();
        single.insert(key.clone(), value.clone());
        match T::deserialize(single) {
            Ok(_) => {
                valid.insert(key.clone(), value.clone());
            }
            Err(e) => errors.push(format!("{prefix}{key}: {}", e.message().trim())),
        }
    }
    match T::deserialize(valid) {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{}{}", prefix, e.message().trim()));
            None
        }
    }
}

/// Top-level keys of a run file besides `[train]`.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct RunTop {
    dataset: Option<PathBuf>,
    seeds: Vec<u64>,
    out: Option<PathBuf>,
    sweep: SweepSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub layers: Vec<usize>,
    pub methods: Vec<Variant>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            layers: vec![2, 4, 6, 8],
            methods: Variant::ALL.to_vec(),
        }
    }
}

/// A training or sweep run: dataset bundle, seeds and the training config.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub sweep: SweepSection,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigErrors> {
        let mut table = read_table(path)?;
        let mut errors = Vec::new();
        let train = match table.remove("train") {
            None => Some(TrainConfig::default()),
            Some(toml::Value::Table(t)) => parse_keys::<TrainConfig>(&t, "train.", &mut errors),
            Some(_) => {
                errors.push("train: expected a table".into());
                None
            }
        };
        let top = parse_keys::<RunTop>(&table, "", &mut errors);
        if let Some(train) = &train {
            errors.extend(train.problems().into_iter().map(|p| format!("train: {p}")));
        }
        if let Some(top) = &top {
            if top.dataset.is_none() {
                errors.push("dataset: required".into());
            }
            if top.seeds.is_empty() {
                errors.push("seeds: at least one seed is required".into());
            }
            if top.sweep.layers.is_empty() || top.sweep.layers.iter().any(|l| !(1..=8).contains(l)) {
                errors.push("sweep.layers: depths must be nonempty and within 1..=8".into());
            }
            if top.sweep.methods.is_empty() {
                errors.push("sweep.methods: at least one method is required".into());
            }
        }
        match (top, train) {
            (Some(top), Some(train)) if errors.is_empty() => Ok(RunConfig {
                dataset: top.dataset.expect("checked"),
                seeds: top.seeds,
                out: top.out,
                sweep: top.sweep,
                train,
            }),
            _ => Err(ConfigErrors(errors)),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct TheoryFile {
    /// Latent dimension of the identity covariance when none is given.
    dim: usize,
    sigma_diagonal: Option<Vec<f64>>,
    sigma: Option<Vec<Vec<f64>>>,
    k_max: usize,
    p: f64,
}

impl Default for TheoryFile {
    fn default() -> Self {
        TheoryFile {
            dim: 8,
            sigma_diagonal: None,
            sigma: None,
            k_max: 32,
            p: 0.5,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct EmpiricalFile {
    k_max: usize,
    seeds: Vec<u64>,
    n_train: usize,
    n_test: usize,
    lambda: f64,
    noise: f64,
    density: f64,
}

impl Default for EmpiricalFile {
    fn default() -> Self {
        let spec = LatentSpec::default();
        EmpiricalFile {
            k_max: 20,
            seeds: vec![0, 1, 2, 3, 4],
            n_train: spec.n_train,
            n_test: spec.n_test,
            lambda: spec.lambda,
            noise: spec.noise,
            density: spec.density,
        }
    }
}

/// Resolved theory spec.
#[derive(Clone, Debug)]
pub struct TheoryConfig {
    pub sigma: Covariance,
    pub k_max: usize,
    pub p: f64,
    /// Latent model, empirical horizon and seeds, when requested.
    pub empirical: Option<(LatentSpec, usize, Vec<u64>)>,
}

impl TheoryConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigErrors> {
        let table = read_table(path)?;
        let mut errors = Vec::new();
        let mut rest = table.clone();
        let emp = match rest.remove("empirical") {
            None => None,
            Some(toml::Value::Table(t)) => parse_keys::<EmpiricalFile>(&t, "empirical.", &mut errors),
            Some(_) => {
                errors.push("empirical: expected a table".into());
                None
            }
        };
        let file = parse_keys::<TheoryFile>(&rest, "", &mut errors);
        let Some(file) = file else { return Err(ConfigErrors(errors)) };

        let sigma = match (&file.sigma_diagonal, &file.sigma) {
            (Some(_), Some(_)) => {
                errors.push("sigma and sigma_diagonal are mutually exclusive".into());
                None
            }
            (Some(d), None) => Some(Covariance::Diagonal(d.clone())),
            (None, Some(rows)) => match unigap::diffcore::Tensor::from_rows(rows) {
                Ok(t) if t.rows() == t.cols() => Some(Covariance::Full(t)),
                _ => {
                    errors.push("sigma: expected a square matrix given as equal-length rows".into());
                    None
                }
            },
            (None, None) if file.dim > 0 => Some(Covariance::identity(file.dim)),
            (None, None) => {
                errors.push("dim: must be positive".into());
                None
            }
        };
        if file.k_max < 4 {
            errors.push(format!("k_max: must be at least 4, got {}", file.k_max));
        }
        if !(0.0..=1.0).contains(&file.p) {
            errors.push(format!("p: must lie in [0, 1], got {}", file.p));
        }
        let empirical = match (&sigma, emp) {
            (Some(sigma), Some(e)) => {
                let spec = LatentSpec {
                    sigma: sigma.clone(),
                    n_train: e.n_train,
                    n_test: e.n_test,
                    lambda: e.lambda,
                    p: file.p,
                    noise: e.noise,
                    density: e.density,
                    ..LatentSpec::default()
                };
                if let Err(err) = spec.validate() {
                    errors.push(format!("empirical: {err}"));
                }
                if e.seeds.is_empty() {
                    errors.push("empirical.seeds: at least one seed is required".into());
                }
                if e.k_max < 2 {
                    errors.push("empirical.k_max: must be at least 2".into());
                }
                Some((spec, e.k_max, e.seeds))
            }
            _ => None,
        };
        match sigma {
            Some(sigma) if errors.is_empty() => Ok(TheoryConfig {
                sigma,
                k_max: file.k_max,
                p: file.p,
                empirical,
            }),
            _ => Err(ConfigErrors(errors)),
        }
    }
}
