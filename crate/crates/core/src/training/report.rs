use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graphdata::io::write_atomic;
use crate::upsampler::{InsertionDecision, Variant};

/// Metrics of one epoch, measured in evaluation mode after the update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Training objective of the update step.
    pub loss: f64,
    /// Node-normalized MAD of the last hidden layer over the original graph.
    pub mad: f64,
    /// Edge-normalized MAD on the same states.
    pub mad_per_edge: f64,
    pub dirichlet: f64,
    pub insertions: usize,
    pub intra_ratio: f64,
    pub inter_ratio: f64,
}

/// `(split, metric)` columns in write order.
const FIELDS: [(&str, &str); 10] = [
    ("train", "accuracy"),
    ("val", "accuracy"),
    ("test", "accuracy"),
    ("train", "loss"),
    ("all", "mad"),
    ("all", "mad_per_edge"),
    ("all", "dirichlet"),
    ("all", "insertions"),
    ("all", "intra_ratio"),
    ("all", "inter_ratio"),
];

impl EpochRecord {
    fn values(&self) -> [f64; 10] {
        [
            self.train_acc,
            self.val_acc,
            self.test_acc,
            self.loss,
            self.mad,
            self.mad_per_edge,
            self.dirichlet,
            self.insertions as f64,
            self.intra_ratio,
            self.inter_ratio,
        ]
    }

    fn set(&mut self, field: usize, v: f64) {
        match field {
            0 => self.train_acc = v,
            1 => self.val_acc = v,
            2 => self.test_acc = v,
            3 => self.loss = v,
            4 => self.mad = v,
            5 => self.mad_per_edge = v,
            6 => self.dirichlet = v,
            7 => self.insertions = v as usize,
            8 => self.intra_ratio = v,
            _ => self.inter_ratio = v,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Evaluation-mode decision at the best epoch, when the variant inserts.
    pub best_decision: Option<InsertionDecision>,
    /// Directed edges of the last epoch; differs from the input only when
    /// the variant rewires.
    pub final_edges: Vec<(usize, usize)>,
}

impl ExperimentReport {
    /// Earliest epoch with the highest validation accuracy.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_acc >= r.val_acc => Some(b),
                _ => Some(r),
            })
    }

    pub fn best_test_accuracy(&self) -> f64 {
        self.best().map_or(0.0, |r| r.test_acc)
    }

    /// Long-format CSV `epoch,split,metric,value`. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,metric,value\n");
        for r in &self.epochs {
            for ((split, metric), v) in FIELDS.iter().zip(r.values()) {
                let _ = writeln!(out, "{},{split},{metric},{v}", r.epoch);
            }
        }
        out
    }

    /// Rebuilds the per-epoch records from [`ExperimentReport::to_csv`] output.
    pub fn records_from_csv(text: &str) -> Result<Vec<EpochRecord>> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: "<report>".into(),
            line,
            msg,
        };
        let mut records: Vec<EpochRecord> = Vec::new();
        for (k, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let [epoch, split, metric, value] = cols[..] else {
                return Err(parse_err(k + 1, format!("expected 4 columns, got {}", cols.len())));
            };
            let epoch: usize = epoch.parse().map_err(|e| parse_err(k + 1, format!("epoch: {e}")))?;
            let value: f64 = value.parse().map_err(|e| parse_err(k + 1, format!("value: {e}")))?;
            let field = FIELDS
                .iter()
                .position(|&(s, m)| s == split && m == metric)
                .ok_or_else(|| parse_err(k + 1, format!("unknown column {split}/{metric}")))?;
            if records.last().map_or(true, |r| r.epoch != epoch) {
                records.push(EpochRecord {
                    epoch,
                    ..EpochRecord::default()
                });
            }
            records.last_mut().expect("pushed above").set(field, value);
        }
        Ok(records)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
