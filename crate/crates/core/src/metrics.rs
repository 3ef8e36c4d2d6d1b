//! Evaluation metrics on prediction ensembles.
//!
//! An ensemble is an `M x d` matrix of sampled responses for one case.
//! Every metric is invariant under permutations of the members.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::math::{floor, ln, sqrt, PI};
use crate::scoring;

const NLL_VAR_FLOOR: f64 = 1e-12;

fn check(samples: &Matrix, y: &[f64]) -> Result<()> {
    if samples.rows() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: samples.rows(),
        });
    }
    check_dim(samples.cols(), y.len())?;
    if !crate::math::all_finite(samples.as_slice()) || !crate::math::all_finite(y) {
        return Err(Error::NonFinite("prediction ensemble"));
    }
    Ok(())
}

/// Ensemble mean.
pub fn mean(samples: &Matrix) -> Vec<f64> {
    let m = samples.rows() as f64;
    let mut out = vec![0.0; samples.cols()];
    for row in samples.iter_rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= m);
    out
}

/// Per-coordinate sample variance with the `M - 1` denominator.
pub fn variance(samples: &Matrix) -> Vec<f64> {
    let mu = mean(samples);
    let m = samples.rows() as f64;
    let mut out = vec![0.0; samples.cols()];
    for row in samples.iter_rows() {
        for ((o, v), c) in out.iter_mut().zip(row).zip(&mu) {
            *o += (v - c) * (v - c);
        }
    }
    out.iter_mut().for_each(|o| *o /= m - 1.0);
    out
}

/// `|mean - y|_2`
pub fn rmse(samples: &Matrix, y: &[f64]) -> Result<f64> {
    check(samples, y)?;
    let mu = mean(samples);
    Ok(sqrt(mu.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()))
}

/// Energy-score estimator with `beta = 1`.
pub fn energy_score(samples: &Matrix, y: &[f64]) -> Result<f64> {
    check(samples, y)?;
    scoring::energy_score_samples(samples, y, 1.0)
}

/// Coordinatewise sample CRPS averaged over coordinates.
pub fn crps(samples: &Matrix, y: &[f64]) -> Result<f64> {
    check(samples, y)?;
    scoring::crps_empirical(samples, y)
}

/// `(1/d) sum_k [log(2 pi s_k^2) + (mean_k - y_k)^2 / s_k^2]` with the
/// sample variance floored at `1e-12`. There is no factor one half.
pub fn nll_gaussian(samples: &Matrix, y: &[f64]) -> Result<f64> {
    check(samples, y)?;
    let mu = mean(samples);
    let var = variance(samples);
    let d = y.len() as f64;
    Ok(mu
        .iter()
        .zip(&var)
        .zip(y)
        .map(|((m, v), yk)| {
            let v = v.max(NLL_VAR_FLOOR);
            ln(2.0 * PI * v) + (m - yk) * (m - yk) / v
        })
        .sum::<f64>()
        / d)
}

/// Linear interpolation between order statistics of a sorted slice
/// (`h = (M - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = floor(h) as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Fraction of coordinates whose observation lies in the closed central
/// interval `[q(alpha / 2), q(1 - alpha / 2)]`.
pub fn coverage(samples: &Matrix, y: &[f64], alpha: f64) -> Result<f64> {
    check(samples, y)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("coverage level must lie in (0, 1)"));
    }
    let mut inside = 0usize;
    let mut col = vec![0.0; samples.rows()];
    for (k, yk) in y.iter().enumerate() {
        for (c, row) in col.iter_mut().zip(samples.iter_rows()) {
            *c = row[k];
        }
        col.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&col, alpha / 2.0);
        let hi = quantile_sorted(&col, 1.0 - alpha / 2.0);
        if lo <= *yk && *yk <= hi {
            inside += 1;
        }
    }
    Ok(inside as f64 / y.len() as f64)
}

/// All metrics of one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub rmse: f64,
    pub es: f64,
    pub crps: f64,
    pub nll: f64,
    pub coverage_95: f64,
}

pub fn case_metrics(samples: &Matrix, y: &[f64]) -> Result<CaseMetrics> {
    Ok(CaseMetrics {
        rmse: rmse(samples, y)?,
        es: energy_score(samples, y)?,
        crps: crps(samples, y)?,
        nll: nll_gaussian(samples, y)?,
        coverage_95: coverage(samples, y, 0.05)?,
    })
}

/// Case-averaged metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub es: f64,
    pub crps: f64,
    pub nll: f64,
    pub coverage_95: f64,
    pub n_cases: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub fn aggregate(cases: &[CaseMetrics], seed: u64) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = cases.len() as f64;
        let avg = |f: fn(&CaseMetrics) -> f64| cases.iter().map(f).sum::<f64>() / n;
        Ok(MetricsReport {
            rmse: avg(|c| c.rmse),
            es: avg(|c| c.es),
            crps: avg(|c| c.crps),
            nll: avg(|c| c.nll),
            coverage_95: avg(|c| c.coverage_95),
            n_cases: cases.len(),
            seed,
        })
    }
}
