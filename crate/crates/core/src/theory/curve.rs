use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::training::{line_chart, Series};

#[derive(Clone, Debug, PartialEq)]
pub struct CurveSeries {
    pub mode: String,
    pub values: Vec<f64>,
    /// Fitted slope of `ln value` against `k`, when a rate was fitted.
    pub slope: Option<f64>,
}

/// Risk or covariance-norm curves over a shared, strictly increasing `k`
/// grid; all values are finite and nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskCurve {
    pub ks: Vec<usize>,
    pub series: Vec<CurveSeries>,
    /// Insertion probability the upsampled curve was computed with.
    pub p: f64,
}

impl RiskCurve {
    pub fn new(ks: Vec<usize>, series: Vec<CurveSeries>, p: f64) -> Result<Self> {
        if ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("k values must be strictly increasing".into()));
        }
        for s in &series {
            if s.values.len() != ks.len() {
                return Err(Error::shape("RiskCurve", &[ks.len()], &[s.values.len()]));
            }
            if s.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument(format!("{} curve has a negative or non-finite value", s.mode)));
            }
        }
        Ok(RiskCurve { ks, series, p })
    }

    pub fn get(&self, mode: &str) -> Option<&CurveSeries> {
        self.series.iter().find(|s| s.mode == mode)
    }

    /// `slope(num) / slope(den)`.
    pub fn slope_ratio(&self, num: &str, den: &str) -> Option<f64> {
        Some(self.get(num)?.slope? / self.get(den)?.slope?)
    }

    /// `k` of the smallest value; the earliest wins ties.
    pub fn argmin(&self, mode: &str) -> Option<usize> {
        let s = self.get(mode)?;
        let best = s.values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))?;
        Some(self.ks[best.0])
    }

    /// Long format `k,mode,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mode,value\n");
        for s in &self.series {
            for (k, v) in self.ks.iter().zip(&s.values) {
                let _ = writeln!(out, "{k},{},{v}", s.mode);
            }
        }
        out
    }

    /// Log-scale plot: the y axis shows `log10 value`.
    pub fn to_svg(&self, title: &str) -> String {
        let series: Vec<Series> = self
            .series
            .iter()
            .map(|s| Series {
                name: s.mode.clone(),
                points: self
                    .ks
                    .iter()
                    .zip(&s.values)
                    .map(|(&k, &v)| (k as f64, v.max(f64::MIN_POSITIVE).log10()))
                    .collect(),
            })
            .collect();
        line_chart(title, "k", "log10 value", &series)
    }
}
