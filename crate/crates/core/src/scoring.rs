//! Proper scoring rules, in closed form where one exists, with gradients.
//!
//! Kernel-type scores share the form `S(P, y) = E rho(X, y) - E rho(X, X') / 2
//! - rho(y, y) / 2` with `X, X' ~ P` independent. CRPS uses
//! `rho = |x - y|`, the energy score `rho = |x - y|^beta` and the Gaussian
//! kernel score `rho = -exp(-|x - y|^2 / gamma^2)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::math::{exp, ln, norm_cdf, norm_pdf, powf, sqrt, FRAC_1_SQRT_PI, PI};
use crate::noisedist::{NoiseDist, ShiftedSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreRule {
    Crps,
    Energy,
    GaussianKernel,
    Log,
}

impl ScoreRule {
    pub fn name(self) -> &'static str {
        match self {
            ScoreRule::Crps => "crps",
            ScoreRule::Energy => "energy",
            ScoreRule::GaussianKernel => "gaussian-kernel",
            ScoreRule::Log => "log",
        }
    }
}

impl fmt::Display for ScoreRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crps" => Ok(ScoreRule::Crps),
            "energy" => Ok(ScoreRule::Energy),
            "gaussian-kernel" | "kernel" => Ok(ScoreRule::GaussianKernel),
            "log" => Ok(ScoreRule::Log),
            other => Err(Error::invalid(format!(
                "unknown score rule `{other}` (expected crps, energy, gaussian-kernel or log)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub rule: ScoreRule,
    /// Gaussian kernel bandwidth.
    pub gamma: f64,
    /// Energy-score exponent in `(0, 2)`.
    pub beta_exp: f64,
    /// Sample count for the sample-based estimators.
    pub samples: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            rule: ScoreRule::Crps,
            gamma: 10.0,
            beta_exp: 1.0,
            samples: 3,
        }
    }
}

impl ScoreConfig {
    pub fn new(rule: ScoreRule) -> Self {
        ScoreConfig {
            rule,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!(
                "kernel bandwidth must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.beta_exp > 0.0 && self.beta_exp < 2.0) {
            return Err(Error::invalid(format!(
                "energy exponent must lie in (0, 2), got {}",
                self.beta_exp
            )));
        }
        if self.samples < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                found: self.samples,
            });
        }
        Ok(())
    }
}

/// Gradient of a score with respect to the constrained parameters of a
/// [`NoiseDist`], laid out like the distribution itself.
#[derive(Debug, Clone, PartialEq)]
pub enum DistGrad {
    Diag {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    /// Component means and variances are `K x d`.
    Mixture {
        weights: Vec<f64>,
        means: Matrix,
        vars: Matrix,
    },
    LowRank {
        mean: Vec<f64>,
        factor: Matrix,
        diag: Vec<f64>,
    },
    /// Only the lower triangle of `chol` is meaningful.
    Cholesky {
        mean: Vec<f64>,
        chol: Matrix,
    },
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "standard deviation must be positive, got {sigma}"
        )))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "kernel bandwidth must be positive, got {gamma}"
        )))
    }
}

/// CRPS of `N(mu, sigma^2)` at `y`:
/// `sigma [z (2 Phi(z) - 1) + 2 phi(z) - 1 / sqrt(pi)]`, `z = (y - mu) / sigma`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let z = (y - mu) / sigma;
    Ok(sigma * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - FRAC_1_SQRT_PI))
}

/// `(score, d/dmu, d/dsigma)`.
pub fn crps_gaussian_grad(mu: f64, sigma: f64, y: f64) -> Result<(f64, f64, f64)> {
    let s = crps_gaussian(mu, sigma, y)?;
    let z = (y - mu) / sigma;
    Ok((
        s,
        1.0 - 2.0 * norm_cdf(z),
        2.0 * norm_pdf(z) - FRAC_1_SQRT_PI,
    ))
}

/// `E|X|` for `X ~ N(m, v)`.
fn folded_mean(m: f64, v: f64) -> f64 {
    let s = sqrt(v);
    let z = m / s;
    m * (2.0 * norm_cdf(z) - 1.0) + 2.0 * s * norm_pdf(z)
}

/// Partial derivatives of [`folded_mean`] in `m` and in `v`.
fn folded_mean_grad(m: f64, v: f64) -> (f64, f64) {
    let s = sqrt(v);
    let z = m / s;
    (2.0 * norm_cdf(z) - 1.0, norm_pdf(z) / s)
}

fn check_mixture_1d(weights: &[f64], means: &[f64], vars: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    check_dim(weights.len(), means.len())?;
    check_dim(weights.len(), vars.len())?;
    if weights.iter().any(|w| !(*w >= 0.0)) || vars.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid(
            "mixture needs nonnegative weights and positive variances",
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// CRPS of the univariate Gaussian mixture `sum_k w_k N(mu_k, v_k)`.
pub fn crps_mixture(weights: &[f64], means: &[f64], vars: &[f64], y: f64) -> Result<f64> {
    check_mixture_1d(weights, means, vars)?;
    let k = weights.len();
    let mut s = 0.0;
    for i in 0..k {
        s += weights[i] * folded_mean(y - means[i], vars[i]);
        for j in 0..k {
            s -=
                0.5 * weights[i] * weights[j] * folded_mean(means[i] - means[j], vars[i] + vars[j]);
        }
    }
    Ok(s)
}

/// `(score, d/dw, d/dmu, d/dvar)` of [`crps_mixture`].
pub fn crps_mixture_grad(
    weights: &[f64],
    means: &[f64],
    vars: &[f64],
    y: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_mixture_1d(weights, means, vars)?;
    let k = weights.len();
    let mut s = 0.0;
    let mut gw = vec![0.0; k];
    let mut gm = vec![0.0; k];
    let mut gv = vec![0.0; k];
    for i in 0..k {
        let a = folded_mean(y - means[i], vars[i]);
        let (am, av) = folded_mean_grad(y - means[i], vars[i]);
        s += weights[i] * a;
        gw[i] += a;
        gm[i] -= weights[i] * am;
        gv[i] += weights[i] * av;
        for j in 0..k {
            let (m, v) = (means[i] - means[j], vars[i] + vars[j]);
            let b = folded_mean(m, v);
            let (bm, bv) = folded_mean_grad(m, v);
            s -= 0.5 * weights[i] * weights[j] * b;
            gw[i] -= weights[j] * b;
            gm[i] -= weights[i] * weights[j] * bm;
            gv[i] -= weights[i] * weights[j] * bv;
        }
    }
    Ok((s, gw, gm, gv))
}

/// Gaussian kernel score of `N(mu, sigma2)` at `y` with bandwidth `gamma`.
pub fn kernel_score_gaussian_1d(mu: f64, sigma2: f64, y: f64, gamma: f64) -> Result<f64> {
    Ok(kernel_score_gaussian_1d_grad(mu, sigma2, y, gamma)?.0)
}

/// `(score, d/dmu, d/dsigma2)`.
pub fn kernel_score_gaussian_1d_grad(
    mu: f64,
    sigma2: f64,
    y: f64,
    gamma: f64,
) -> Result<(f64, f64, f64)> {
    check_gamma(gamma)?;
    if !(sigma2 >= 0.0) {
        return Err(Error::invalid(format!(
            "variance must be nonnegative, got {sigma2}"
        )));
    }
    let g2 = gamma * gamma;
    let delta = y - mu;
    let a = 1.0 + 2.0 * sigma2 / g2;
    let b = 1.0 + 4.0 * sigma2 / g2;
    let e = exp(-delta * delta / (g2 + 2.0 * sigma2)) / sqrt(a);
    let s = -e + 0.5 / sqrt(b) + 0.5;
    let dmu = -2.0 * e * delta / (g2 + 2.0 * sigma2);
    let q = delta * delta / (g2 * a);
    let dv = -e * (2.0 / g2) * (-0.5 / a + q / a) - (1.0 / g2) * powf(b, -1.5);
    Ok((s, dmu, dv))
}

/// Multivariate Gaussian kernel score for a single-Gaussian noise
/// distribution:
/// `-det(A2)^(-1/2) exp(-d^T A2^-1 d / gamma^2) + det(A4)^(-1/2) / 2 + 1/2`
/// with `A_c = I + (c / gamma^2) Sigma` and `d = y - mu`.
pub fn kernel_score_mvgaussian(dist: &NoiseDist, y: &[f64], gamma: f64) -> Result<f64> {
    Ok(KernelTerms::new(dist, y, gamma)?.score())
}

struct KernelTerms {
    g2: f64,
    a2: ShiftedSystem,
    a4: ShiftedSystem,
    /// `A2^-1 d`
    w: Vec<f64>,
    /// `det(A2)^(-1/2) exp(-d^T A2^-1 d / gamma^2)`
    e1: f64,
    /// `det(A4)^(-1/2)`
    e2: f64,
}

impl KernelTerms {
    fn new(dist: &NoiseDist, y: &[f64], gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        check_dim(dist.dim(), y.len())?;
        if matches!(dist, NoiseDist::Mixture(_)) {
            return Err(Error::IncompatibleLoss {
                family: "mixture",
                rule: "gaussian-kernel",
                hint: "mixtures are trained with crps or log",
            });
        }
        let g2 = gamma * gamma;
        let (mu, _) = dist.mean_and_var();
        let delta: Vec<f64> = y.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let a2 = ShiftedSystem::new(dist, 2.0 / g2)?;
        let a4 = ShiftedSystem::new(dist, 4.0 / g2)?;
        let w = a2.solve(&delta);
        let q = crate::math::dot(&delta, &w);
        let e1 = exp(-0.5 * a2.logdet() - q / g2);
        let e2 = exp(-0.5 * a4.logdet());
        Ok(KernelTerms {
            g2,
            a2,
            a4,
            w,
            e1,
            e2,
        })
    }

    fn score(&self) -> f64 {
        -self.e1 + 0.5 * self.e2 + 0.5
    }

    fn grad_mean(&self) -> Vec<f64> {
        self.w
            .iter()
            .map(|w| -2.0 * self.e1 * w / self.g2)
            .collect()
    }

    /// Diagonal of the symmetric covariance gradient `G`.
    fn grad_cov_diag(&self) -> Vec<f64> {
        let (s2, s4) = (2.0 / self.g2, 4.0 / self.g2);
        let inv2 = self.a2.inverse_diag();
        let inv4 = self.a4.inverse_diag();
        (0..self.w.len())
            .map(|i| {
                -self.e1 * s2 * (-0.5 * inv2[i] + self.w[i] * self.w[i] / self.g2)
                    - 0.25 * s4 * self.e2 * inv4[i]
            })
            .collect()
    }

    /// `G M` for a `d x k` matrix `M`, one pair of solves per column.
    fn grad_cov_times(&self, m: &Matrix) -> Matrix {
        let (s2, s4) = (2.0 / self.g2, 4.0 / self.g2);
        let (d, k) = (m.rows(), m.cols());
        let mut out = Matrix::zeros(d, k);
        for j in 0..k {
            let col = m.column(j);
            let x2 = self.a2.solve(&col);
            let x4 = self.a4.solve(&col);
            let wm = crate::math::dot(&self.w, &col);
            for i in 0..d {
                out[(i, j)] = -self.e1 * s2 * (-0.5 * x2[i] + self.w[i] * wm / self.g2)
                    - 0.25 * s4 * self.e2 * x4[i];
            }
        }
        out
    }
}

/// `-log N(y; mu, diag(var))`.
pub fn log_score_gaussian_diag(mean: &[f64], var: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(mean.len(), y.len())?;
    check_dim(mean.len(), var.len())?;
    Ok(log_density_diag(mean, var, y).map(|l| -l)?)
}

fn log_density_diag(mean: &[f64], var: &[f64], y: &[f64]) -> Result<f64> {
    let mut l = 0.0;
    for ((m, v), yi) in mean.iter().zip(var).zip(y) {
        if !(*v > 0.0) {
            return Err(Error::invalid("variance must be positive"));
        }
        let r = yi - m;
        l -= 0.5 * (ln(2.0 * PI * v) + r * r / v);
    }
    Ok(l)
}

/// Energy-score estimator from `M` samples (rows):
/// `(1/M) sum |x_m - y|^b - 1/(2M(M-1)) sum_{m != h} |x_m - x_h|^b`.
pub fn energy_score_samples(samples: &Matrix, y: &[f64], beta_exp: f64) -> Result<f64> {
    Ok(energy_score_terms(samples, y, beta_exp, false)?.0)
}

/// Estimator value and its gradient with respect to every sample.
pub fn energy_score_samples_grad(
    samples: &Matrix,
    y: &[f64],
    beta_exp: f64,
) -> Result<(f64, Matrix)> {
    let (s, g) = energy_score_terms(samples, y, beta_exp, true)?;
    Ok((s, g.expect("gradient requested")))
}

fn energy_score_terms(
    samples: &Matrix,
    y: &[f64],
    beta: f64,
    want_grad: bool,
) -> Result<(f64, Option<Matrix>)> {
    let (m, d) = (samples.rows(), samples.cols());
    if m < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: m,
        });
    }
    check_dim(d, y.len())?;
    if !(beta > 0.0 && beta < 2.0) {
        return Err(Error::invalid(format!(
            "energy exponent must lie in (0, 2), got {beta}"
        )));
    }
    let mf = m as f64;
    let pair_coef = 1.0 / (2.0 * mf * (mf - 1.0));
    let mut grad = if want_grad {
        Some(Matrix::zeros(m, d))
    } else {
        None
    };
    let mut diff = vec![0.0; d];
    let mut s = 0.0;
    for a in 0..m {
        let xa = samples.row(a);
        for ((o, x), yi) in diff.iter_mut().zip(xa).zip(y) {
            *o = x - yi;
        }
        let r = crate::math::norm2(&diff);
        s += powf(r, beta) / mf;
        if let Some(g) = grad.as_mut() {
            if r > 0.0 {
                let c = beta * powf(r, beta - 2.0) / mf;
                for (gi, di) in g.row_mut(a).iter_mut().zip(&diff) {
                    *gi += c * di;
                }
            }
        }
        for b in a + 1..m {
            for ((o, x), z) in diff.iter_mut().zip(xa).zip(samples.row(b)) {
                *o = x - z;
            }
            let r = crate::math::norm2(&diff);
            // Ordered pairs (a, b) and (b, a) contribute equally.
            s -= 2.0 * pair_coef * powf(r, beta);
            if let Some(g) = grad.as_mut() {
                if r > 0.0 {
                    let c = 2.0 * pair_coef * beta * powf(r, beta - 2.0);
                    for i in 0..d {
                        g[(a, i)] -= c * diff[i];
                        g[(b, i)] += c * diff[i];
                    }
                }
            }
        }
    }
    Ok((s, grad))
}

/// Coordinatewise sample CRPS (energy estimator with `beta = 1` per
/// coordinate), averaged over coordinates.
pub fn crps_empirical(samples: &Matrix, y: &[f64]) -> Result<f64> {
    let (m, d) = (samples.rows(), samples.cols());
    if m < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: m,
        });
    }
    check_dim(d, y.len())?;
    let mf = m as f64;
    let mut total = 0.0;
    let mut col = vec![0.0; m];
    for i in 0..d {
        for (c, row) in col.iter_mut().zip(samples.iter_rows()) {
            *c = row[i];
        }
        total += crps_sorted_estimator(&mut col, y[i], mf);
    }
    Ok(total / d as f64)
}

/// `(1/M) sum |x_m - y| - 1/(M(M-1)) sum_{m<h} |x_m - x_h|`, with the pair
/// sum taken from the sorted sample in `O(M log M)`.
fn crps_sorted_estimator(xs: &mut [f64], y: f64, m: f64) -> f64 {
    let first: f64 = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
    xs.sort_by(f64::total_cmp);
    // sum_{a<b} (x_b - x_a) = sum_i (2i - M + 1) x_(i)
    let pairs: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - m + 1.0) * x)
        .sum();
    first - pairs / (m * (m - 1.0))
}

/// Closed-form score of `dist` at `y`.
pub fn score(dist: &NoiseDist, y: &[f64], cfg: &ScoreConfig) -> Result<f64> {
    Ok(score_with_grad(dist, y, cfg)?.0)
}

/// Closed-form score and its gradient with respect to the distribution's
/// parameters. Coordinatewise rules (CRPS) are averaged over coordinates;
/// the log score is the full negative log density.
pub fn score_with_grad(dist: &NoiseDist, y: &[f64], cfg: &ScoreConfig) -> Result<(f64, DistGrad)> {
    check_dim(dist.dim(), y.len())?;
    let d = y.len();
    let df = d as f64;
    match (cfg.rule, dist) {
        (ScoreRule::Crps, NoiseDist::Diag(p)) => {
            let (mut s, mut gm, mut gv) = (0.0, vec![0.0; d], vec![0.0; d]);
            for i in 0..d {
                let sigma = sqrt(p.var()[i]);
                let (v, dmu, dsig) = crps_gaussian_grad(p.mean()[i], sigma, y[i])?;
                s += v / df;
                gm[i] = dmu / df;
                gv[i] = dsig / (2.0 * sigma) / df;
            }
            Ok((s, DistGrad::Diag { mean: gm, var: gv }))
        }
        (ScoreRule::Crps, NoiseDist::Mixture(p)) => {
            let k = p.len();
            let mut s = 0.0;
            let mut gw = vec![0.0; k];
            let mut means = Matrix::zeros(k, d);
            let mut vars = Matrix::zeros(k, d);
            for i in 0..d {
                let (mu, var) = p.marginal(i);
                let (v, dw, dm, dv) = crps_mixture_grad(p.weights(), &mu, &var, y[i])?;
                s += v / df;
                for c in 0..k {
                    gw[c] += dw[c] / df;
                    means[(c, i)] = dm[c] / df;
                    vars[(c, i)] = dv[c] / df;
                }
            }
            Ok((
                s,
                DistGrad::Mixture {
                    weights: gw,
                    means,
                    vars,
                },
            ))
        }
        (ScoreRule::GaussianKernel, NoiseDist::Mixture(_)) => Err(Error::IncompatibleLoss {
            family: "mixture",
            rule: "gaussian-kernel",
            hint: "train mixture heads with score.rule = crps or log",
        }),
        (ScoreRule::GaussianKernel, _) => {
            check_gamma(cfg.gamma)?;
            let kt = KernelTerms::new(dist, y, cfg.gamma)?;
            let mean = kt.grad_mean();
            let grad = match dist {
                NoiseDist::Diag(_) => DistGrad::Diag {
                    mean,
                    var: kt.grad_cov_diag(),
                },
                NoiseDist::LowRank(p) => {
                    let mut factor = kt.grad_cov_times(p.factor());
                    factor.scale(2.0);
                    DistGrad::LowRank {
                        mean,
                        factor,
                        diag: kt.grad_cov_diag(),
                    }
                }
                NoiseDist::Cholesky(p) => {
                    let mut chol = kt.grad_cov_times(p.chol());
                    chol.scale(2.0);
                    for i in 0..d {
                        for j in i + 1..d {
                            chol[(i, j)] = 0.0;
                        }
                    }
                    DistGrad::Cholesky { mean, chol }
                }
                NoiseDist::Mixture(_) => unreachable!("rejected above"),
            };
            Ok((kt.score(), grad))
        }
        (ScoreRule::Log, NoiseDist::Diag(p)) => {
            let s = log_score_gaussian_diag(p.mean(), p.var(), y)?;
            let mut gm = vec![0.0; d];
            let mut gv = vec![0.0; d];
            for i in 0..d {
                let (r, v) = (y[i] - p.mean()[i], p.var()[i]);
                gm[i] = -r / v;
                gv[i] = 0.5 * (1.0 / v - r * r / (v * v));
            }
            Ok((s, DistGrad::Diag { mean: gm, var: gv }))
        }
        (ScoreRule::Log, NoiseDist::Mixture(p)) => {
            let k = p.len();
            let logs = p
                .components()
                .iter()
                .map(|c| log_density_diag(c.mean(), c.var(), y))
                .collect::<Result<Vec<_>>>()?;
            let mut terms = Vec::with_capacity(k);
            for (w, l) in p.weights().iter().zip(&logs) {
                terms.push(if *w > 0.0 {
                    ln(*w) + l
                } else {
                    f64::NEG_INFINITY
                });
            }
            let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_p = top + ln(terms.iter().map(|t| exp(t - top)).sum::<f64>());
            let mut gw = vec![0.0; k];
            let mut means = Matrix::zeros(k, d);
            let mut vars = Matrix::zeros(k, d);
            for (c, comp) in p.components().iter().enumerate() {
                gw[c] = -exp(logs[c] - log_p);
                let resp = exp(terms[c] - log_p);
                for i in 0..d {
                    let (r, v) = (y[i] - comp.mean()[i], comp.var()[i]);
                    means[(c, i)] = -resp * r / v;
                    vars[(c, i)] = resp * 0.5 * (1.0 / v - r * r / (v * v));
                }
            }
            Ok((
                -log_p,
                DistGrad::Mixture {
                    weights: gw,
                    means,
                    vars,
                },
            ))
        }
        (rule, dist) => Err(incompatible(dist, rule)),
    }
}

fn incompatible(dist: &NoiseDist, rule: ScoreRule) -> Error {
    let family = match dist {
        NoiseDist::Diag(_) => "diag",
        NoiseDist::Mixture(_) => "mixture",
        NoiseDist::LowRank(_) => "lowrank",
        NoiseDist::Cholesky(_) => "cholesky",
    };
    let (rule, hint) = match (rule, dist) {
        (ScoreRule::Energy, NoiseDist::LowRank(_) | NoiseDist::Cholesky(_)) => (
            "energy",
            "the energy score has no closed form for multivariate Gaussians; use score.rule = gaussian-kernel",
        ),
        (ScoreRule::Energy, _) => ("energy", "the energy score needs the es-sample head; use score.rule = crps"),
        (ScoreRule::Crps, _) => ("crps", "CRPS is coordinatewise; multivariate heads use score.rule = gaussian-kernel"),
        (ScoreRule::Log, _) => ("log", "the log score is available for diag and mixture heads"),
        (ScoreRule::GaussianKernel, _) => ("gaussian-kernel", "use score.rule = crps"),
    };
    Error::IncompatibleLoss { family, rule, hint }
}

/// Monte-Carlo estimate of the kernel-type score of the distribution drawn
/// by `sample`, with its standard error.
///
/// Each of the `n` terms uses an independent pair `X, X'`:
/// `rho(X, y) - rho(X, X') / 2 - rho(y, y) / 2`. The log score has no such
/// representation and is rejected.
pub fn mc_score_oracle<R, F>(
    mut sample: F,
    y: &[f64],
    cfg: &ScoreConfig,
    n: usize,
    rng: &mut R,
) -> Result<(f64, f64)>
where
    R: rand::Rng + ?Sized,
    F: FnMut(&mut R, &mut [f64]),
{
    const MIN_DRAWS: usize = 10_000;
    if n < MIN_DRAWS {
        return Err(Error::TooFewSamples {
            needed: MIN_DRAWS,
            found: n,
        });
    }
    let d = y.len();
    let rho = |a: &[f64], b: &[f64]| -> f64 {
        match cfg.rule {
            ScoreRule::Crps => a.iter().zip(b).map(|(x, z)| (x - z).abs()).sum::<f64>() / d as f64,
            ScoreRule::Energy => powf(
                sqrt(a.iter().zip(b).map(|(x, z)| (x - z) * (x - z)).sum()),
                cfg.beta_exp,
            ),
            ScoreRule::GaussianKernel => {
                -exp(
                    -a.iter().zip(b).map(|(x, z)| (x - z) * (x - z)).sum::<f64>()
                        / (cfg.gamma * cfg.gamma),
                )
            }
            ScoreRule::Log => 0.0,
        }
    };
    if cfg.rule == ScoreRule::Log {
        return Err(Error::invalid(
            "the log score has no kernel representation for a Monte-Carlo oracle",
        ));
    }
    check_gamma(cfg.gamma)?;
    let ryy = rho(y, y);
    let (mut x, mut x2) = (vec![0.0; d], vec![0.0; d]);
    // Welford accumulation keeps the variance accurate for large n.
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..n {
        sample(rng, &mut x);
        sample(rng, &mut x2);
        let term = rho(&x, y) - 0.5 * rho(&x, &x2) - 0.5 * ryy;
        let delta = term - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (term - mean);
    }
    let var = m2 / (n - 1) as f64;
    Ok((mean, sqrt(var / n as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::SQRT_2;
    use crate::noisedist::{DiagGaussian, LowRankGaussian};
    use crate::seeded_rng;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn crps_gaussian_values() {
        // 2 phi(0) - 1/sqrt(pi) = (sqrt(2) - 1) / sqrt(pi)
        let want = (SQRT_2 - 1.0) / sqrt(PI);
        assert!(close(crps_gaussian(0.0, 1.0, 0.0).unwrap(), want, 1e-15));
        assert!(close(want, 0.233_695, 1e-6));
        for z in [0.1, 0.7, 2.5] {
            assert!(close(
                crps_gaussian(0.0, 1.0, z).unwrap(),
                crps_gaussian(0.0, 1.0, -z).unwrap(),
                1e-15
            ));
        }
        assert!(close(crps_gaussian(0.3, 1e-9, 1.3).unwrap(), 1.0, 1e-8));
        assert!(crps_gaussian(0.0, 0.0, 1.0).is_err());
        assert!(crps_gaussian(0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn crps_mixture_reductions() {
        for y in [-1.3, 0.0, 0.4, 2.2] {
            let single = crps_mixture(&[1.0], &[0.2], &[0.49], y).unwrap();
            assert!(close(single, crps_gaussian(0.2, 0.7, y).unwrap(), 1e-12));
            let dup = crps_mixture(&[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], y).unwrap();
            assert!(close(dup, crps_gaussian(0.0, 1.0, y).unwrap(), 1e-12));
            let uneven = crps_mixture(&[0.1, 0.2, 0.7], &[0.5; 3], &[2.0; 3], y).unwrap();
            assert!(close(
                uneven,
                crps_gaussian(0.5, sqrt(2.0), y).unwrap(),
                1e-12
            ));
        }
        assert!(crps_mixture(&[0.5, 0.6], &[0.0, 0.0], &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn kernel_1d_values() {
        assert!(close(
            kernel_score_gaussian_1d(0.4, 0.0, 0.4, 2.0).unwrap(),
            0.0,
            1e-15
        ));
        for (mu, y, g) in [(0.0, 1.0, 1.0), (2.0, -1.0, 3.0)] {
            let want = 1.0 - exp(-(y - mu) * (y - mu) / (g * g));
            assert!(close(
                kernel_score_gaussian_1d(mu, 0.0, y, g).unwrap(),
                want,
                1e-15
            ));
        }
        assert!(kernel_score_gaussian_1d(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn kernel_mv_reduces_to_1d() {
        for (mu, v, y, g) in [
            (0.0, 1.0, 0.5, 1.0),
            (1.2, 0.3, -0.4, 2.5),
            (0.0, 4.0, 3.0, 10.0),
        ] {
            let dist = NoiseDist::Diag(DiagGaussian::new(vec![mu], vec![v]).unwrap());
            let a = kernel_score_mvgaussian(&dist, &[y], g).unwrap();
            let b = kernel_score_gaussian_1d(mu, v, y, g).unwrap();
            assert!(close(a, b, 1e-12));
            let lr = NoiseDist::LowRank(
                LowRankGaussian::new(
                    vec![mu],
                    Matrix::from_vec(1, 1, vec![sqrt(v / 2.0)]).unwrap(),
                    vec![v / 2.0],
                )
                .unwrap(),
            );
            assert!(close(
                kernel_score_mvgaussian(&lr, &[y], g).unwrap(),
                b,
                1e-12
            ));
        }
        let tiny = NoiseDist::LowRank(
            LowRankGaussian::new(vec![0.5; 3], Matrix::zeros(3, 1), vec![0.0; 3]).unwrap(),
        );
        assert!(close(
            kernel_score_mvgaussian(&tiny, &[0.5; 3], 1.0).unwrap(),
            0.0,
            1e-5
        ));
    }

    #[test]
    fn energy_estimator_values() {
        let two = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        assert!(close(
            energy_score_samples(&two, &[1.0], 1.0).unwrap(),
            0.0,
            1e-15
        ));
        let same = Matrix::from_rows(&vec![vec![1.0, 2.0]; 4]).unwrap();
        assert_eq!(energy_score_samples(&same, &[1.0, 2.0], 1.0).unwrap(), 0.0);
        let one = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            energy_score_samples(&one, &[1.0], 1.0),
            Err(Error::TooFewSamples { .. })
        ));

        let mut rng = seeded_rng(1, 0);
        let mut xs = Matrix::zeros(7, 3);
        for v in xs.as_mut_slice() {
            *v = rng.sample(StandardNormal);
        }
        let y = [0.3, -0.2, 1.0];
        let base = energy_score_samples(&xs, &y, 1.3).unwrap();
        let mut shifted = xs.clone();
        for v in shifted.as_mut_slice() {
            *v += 5.0;
        }
        let ys: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
        assert!(close(
            energy_score_samples(&shifted, &ys, 1.3).unwrap(),
            base,
            1e-12
        ));
    }

    #[test]
    fn crps_empirical_matches_double_loop() {
        let mut rng = seeded_rng(2, 0);
        let (m, d) = (9, 4);
        let mut xs = Matrix::zeros(m, d);
        for v in xs.as_mut_slice() {
            *v = rng.sample(StandardNormal);
        }
        let y = [0.1, -1.0, 2.0, 0.0];
        let mut want = 0.0;
        for i in 0..d {
            let mut a = 0.0;
            let mut b = 0.0;
            for p in 0..m {
                a += (xs[(p, i)] - y[i]).abs();
                for q in 0..m {
                    b += (xs[(p, i)] - xs[(q, i)]).abs();
                }
            }
            want += a / m as f64 - b / (2.0 * (m * (m - 1)) as f64);
        }
        want /= d as f64;
        assert!(close(crps_empirical(&xs, &y).unwrap(), want, 1e-12));
        let col = Matrix::from_vec(m, 1, xs.column(2)).unwrap();
        assert!(close(
            crps_empirical(&col, &[y[2]]).unwrap(),
            energy_score_samples(&col, &[y[2]], 1.0).unwrap(),
            1e-12
        ));
    }

    #[test]
    fn log_score_values() {
        let half_log_2pi = 0.5 * ln(2.0 * PI);
        assert!(close(
            log_score_gaussian_diag(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 2.0]).unwrap(),
            2.0 * half_log_2pi,
            1e-14
        ));
        assert!(close(
            log_score_gaussian_diag(&[0.0], &[1.0], &[1.0]).unwrap(),
            half_log_2pi + 0.5,
            1e-14
        ));
        let a = log_score_gaussian_diag(&[0.0], &[1.0], &[0.5]).unwrap();
        let b = log_score_gaussian_diag(&[0.0], &[1.0], &[1.5]).unwrap();
        assert!(a < b);
    }

    #[test]
    fn energy_head_requests_are_guided() {
        let lr = NoiseDist::LowRank(
            LowRankGaussian::new(vec![0.0; 2], Matrix::zeros(2, 1), vec![1.0; 2]).unwrap(),
        );
        match score(&lr, &[0.0, 0.0], &ScoreConfig::new(ScoreRule::Energy)) {
            Err(Error::IncompatibleLoss { hint, .. }) => assert!(hint.contains("gaussian-kernel")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn oracle_degenerate_and_rate() {
        let mut rng = seeded_rng(4, 0);
        let y = [0.5];
        for rule in [
            ScoreRule::Crps,
            ScoreRule::Energy,
            ScoreRule::GaussianKernel,
        ] {
            let cfg = ScoreConfig::new(rule);
            let (est, se) = mc_score_oracle(
                |_, out: &mut [f64]| out[0] = 2.0,
                &y,
                &cfg,
                10_000,
                &mut rng,
            )
            .unwrap();
            let want = match rule {
                ScoreRule::GaussianKernel => 1.0 - exp(-2.25 / 100.0),
                _ => 1.5,
            };
            assert!(close(est, want, 1e-12) && se < 1e-12);
        }
        let cfg = ScoreConfig::new(ScoreRule::Crps);
        let normal = |r: &mut crate::Rng, out: &mut [f64]| out[0] = r.sample(StandardNormal);
        let (_, se1) = mc_score_oracle(normal, &[0.0], &cfg, 10_000, &mut rng).unwrap();
        let (_, se2) = mc_score_oracle(normal, &[0.0], &cfg, 160_000, &mut rng).unwrap();
        // sqrt(16) = 4 times smaller
        assert!((se1 / se2 - 4.0).abs() < 0.4);
        assert!(mc_score_oracle(normal, &[0.0], &cfg, 100, &mut rng).is_err());
        assert!(mc_score_oracle(
            normal,
            &[0.0],
            &ScoreConfig::new(ScoreRule::Log),
            10_000,
            &mut rng
        )
        .is_err());
    }
}
