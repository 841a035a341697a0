//! RMSE, MAPE, confidence intervals and coverage.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decoders::PredictiveDistribution;
use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiKind {
    OneSigma,
    Ci95,
}

impl CiKind {
    pub fn multiplier(self) -> f64 {
        match self {
            CiKind::OneSigma => 1.0,
            CiKind::Ci95 => Z95,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CiKind::OneSigma => "one_sigma",
            CiKind::Ci95 => "ci95",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "one_sigma" => Some(CiKind::OneSigma),
            "ci95" => Some(CiKind::Ci95),
            _ => None,
        }
    }
}

/// `√(Σ‖y_i − ȳ_i‖² / (N·p))` over flat row-major `[N×p]` values.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Contract(format!(
            "rmse needs equal non-empty inputs, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let sq: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / y_true.len() as f64).sqrt())
}

/// `(1/N) Σ |y_i − ȳ_i| / |y_i|` as a fraction.
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Contract(format!(
            "mape needs equal non-empty inputs, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&y, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if y == 0.0 {
            return Err(Error::UndefinedMetric(format!("mape undefined: true value is zero at row {}", i + 1)));
        }
        total += (y - p).abs() / y.abs();
    }
    Ok(total / y_true.len() as f64)
}

/// Per-entry interval bounds, same layout as the distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervals {
    pub y_dim: usize,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

pub fn confidence_interval(dist: &PredictiveDistribution, kind: CiKind) -> Result<Intervals> {
    if let Some(i) = dist.std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Contract(format!("non-positive predictive std {} at entry {i}", dist.std[i])));
    }
    let k = kind.multiplier();
    Ok(Intervals {
        y_dim: dist.y_dim,
        low: dist.mean.iter().zip(&dist.std).map(|(m, s)| m - k * s).collect(),
        high: dist.mean.iter().zip(&dist.std).map(|(m, s)| m + k * s).collect(),
    })
}

/// Coverage summary: a point counts only if every output dimension lies
/// inside its interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub fraction: f64,
    pub covered: Vec<bool>,
    pub per_dim: Vec<f64>,
}

pub fn coverage(y_true: &[f64], intervals: &Intervals) -> Result<Coverage> {
    let p = intervals.y_dim;
    if y_true.len() != intervals.low.len() || p == 0 || y_true.is_empty() {
        return Err(Error::Contract(format!(
            "coverage got {} values for {} intervals",
            y_true.len(),
            intervals.low.len()
        )));
    }
    let n = y_true.len() / p;
    let inside: Vec<bool> = y_true
        .iter()
        .enumerate()
        .map(|(i, &y)| intervals.low[i] <= y && y <= intervals.high[i])
        .collect();
    let covered: Vec<bool> = inside.chunks(p).map(|row| row.iter().all(|&b| b)).collect();
    let per_dim = (0..p)
        .map(|j| inside.iter().skip(j).step_by(p).filter(|&&b| b).count() as f64 / n as f64)
        .collect();
    let fraction = covered.iter().filter(|&&b| b).count() as f64 / n as f64;
    Ok(Coverage { fraction, covered, per_dim })
}

/// One evaluated test point, flattened over output dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub y_true: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    /// `None` when some true value is zero.
    pub mape: Option<f64>,
    pub coverage: f64,
    pub per_dim_coverage: Vec<f64>,
    pub ci_kind: CiKind,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Scores `dist` against `y_true` (flat `[N×p]`), all in one unit system.
    pub fn build(y_true: &[f64], dist: &PredictiveDistribution, kind: CiKind) -> Result<Self> {
        let p = dist.y_dim;
        let rmse = rmse(y_true, &dist.mean)?;
        let mape = match mape(y_true, &dist.mean) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        let ci = confidence_interval(dist, kind)?;
        let cov = coverage(y_true, &ci)?;
        let rows = (0..dist.len())
            .map(|i| {
                let r = i * p..(i + 1) * p;
                EvalRow {
                    y_true: y_true[r.clone()].to_vec(),
                    mean: dist.mean[r.clone()].to_vec(),
                    std: dist.std[r.clone()].to_vec(),
                    low: ci.low[r.clone()].to_vec(),
                    high: ci.high[r].to_vec(),
                    covered: cov.covered[i],
                }
            })
            .collect();
        Ok(Self {
            rmse,
            mape,
            coverage: cov.fraction,
            per_dim_coverage: cov.per_dim,
            ci_kind: kind,
            rows,
        })
    }

    pub fn summary_line(&self) -> String {
        let mape = self.mape.map_or("undefined".to_string(), |m| format!("{:.4}%", m * 100.0));
        format!(
            "rmse={:.6} mape={} coverage({})={:.4}",
            self.rmse,
            mape,
            self.ci_kind.as_str(),
            self.coverage
        )
    }

    /// One CSV row per test point with per-dimension columns.
    pub fn to_csv(&self) -> String {
        let p = self.rows.first().map_or(0, |r| r.y_true.len());
        let mut header = vec!["point".to_string()];
        for j in 1..=p {
            for col in ["y_true", "y_mean", "y_std", "ci_low", "ci_high"] {
                header.push(format!("{col}{j}"));
            }
        }
        header.push("covered".into());
        let mut out = header.join(",");
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, "{i}");
            for j in 0..p {
                let _ = write!(out, ",{:?},{:?},{:?},{:?},{:?}", r.y_true[j], r.mean[j], r.std[j], r.low[j], r.high[j]);
            }
            let _ = writeln!(out, ",{}", r.covered);
        }
        out
    }
}
