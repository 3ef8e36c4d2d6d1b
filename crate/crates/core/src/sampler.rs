//! Reverse-time sampling.
//!
//! For a Gaussian-mixture noise distribution `sum_k pi_k N(mu_k, Sigma_k)`
//! the reverse transition is again a mixture with component means
//! `sqrt(abar_(t-1)) x0_k + lambda_t mu_k`, where
//! `x0_k = (x_t - sqrt(1 - abar_t) mu_k) / sqrt(abar_t)`, and covariances
//! `gamma_t^2 Sigma_k + sigma_t^2 I`. With a prior mean `f` (CARD mode) both
//! the denoised estimate and the mean are shifted accordingly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::math::sqrt;
use crate::net::{HeadFamily, ModelCheckpoint};
use crate::noisedist::{categorical, NoiseDist};
use crate::schedule::NoiseSchedule;
use crate::{seeded_rng, Rng};

/// How per-step noise variances are aggregated into the epistemic estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EuWeighting {
    /// Plain average of `Var[eps]` over steps.
    #[default]
    Unweighted,
    /// Average of `c_t^2 Var[eps]` with
    /// `c_t = (1 - alpha_t) / (sqrt(alpha_t) sqrt(1 - abar_t))`.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub eta: f64,
    /// Covariance rescaling in `(0, 1]`.
    pub tau: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub eu_weighting: EuWeighting,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            eta: 1.0,
            tau: 1.0,
            n_samples: 100,
            seed: 0,
            eu_weighting: EuWeighting::Unweighted,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(format!(
                "tau must lie in (0, 1], got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!(
                "eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("need at least one sample"));
        }
        Ok(())
    }
}

/// Covariance of one component of a reverse transition.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionCov {
    Diag(Vec<f64>),
    /// `factor factor^T + diag(diag)`
    LowRank {
        factor: Matrix,
        diag: Vec<f64>,
    },
    /// `chol chol^T + iso I`
    CholIso {
        chol: Matrix,
        iso: f64,
    },
}

impl TransitionCov {
    fn diagonal(&self) -> Vec<f64> {
        match self {
            TransitionCov::Diag(v) => v.clone(),
            TransitionCov::LowRank { factor, diag } => (0..diag.len())
                .map(|i| factor.row(i).iter().map(|u| u * u).sum::<f64>() + diag[i])
                .collect(),
            TransitionCov::CholIso { chol, iso } => (0..chol.rows())
                .map(|i| chol.row(i)[..=i].iter().map(|l| l * l).sum::<f64>() + iso)
                .collect(),
        }
    }

    pub fn dense(&self) -> Matrix {
        match self {
            TransitionCov::Diag(v) => {
                let mut m = Matrix::zeros(v.len(), v.len());
                for (i, x) in v.iter().enumerate() {
                    m[(i, i)] = *x;
                }
                m
            }
            TransitionCov::LowRank { factor, diag } => {
                let mut m = factor.gram();
                for (i, x) in diag.iter().enumerate() {
                    m[(i, i)] += x;
                }
                m
            }
            TransitionCov::CholIso { chol, iso } => {
                let mut m = chol.gram();
                for i in 0..chol.rows() {
                    m[(i, i)] += iso;
                }
                m
            }
        }
    }
}

/// A Gaussian-mixture distribution over `x_(t-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseTransition {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<TransitionCov>,
}

impl ReverseTransition {
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Mixture mean and per-coordinate total variance.
    pub fn mean_and_var(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d];
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            let v = c.diagonal();
            for i in 0..d {
                mean[i] += w * m[i];
                second[i] += w * (v[i] + m[i] * m[i]);
            }
        }
        let var = second
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s - m * m).max(0.0))
            .collect();
        (mean, var)
    }

    /// One draw. A uniform for the component choice is always consumed, so
    /// a one-component transition uses the stream exactly like a mixture.
    pub fn sample_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let k = categorical(&self.weights, rng.random::<f64>());
        let mean = &self.means[k];
        match &self.covs[k] {
            TransitionCov::Diag(v) => {
                for i in 0..mean.len() {
                    let z: f64 = rng.sample(StandardNormal);
                    out[i] = mean[i] + sqrt(v[i]) * z;
                }
            }
            TransitionCov::LowRank { factor, diag } => {
                let latent: Vec<f64> = (0..factor.cols())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                for i in 0..mean.len() {
                    let z: f64 = rng.sample(StandardNormal);
                    out[i] = mean[i] + crate::math::dot(factor.row(i), &latent) + sqrt(diag[i]) * z;
                }
            }
            TransitionCov::CholIso { chol, iso } => {
                let latent: Vec<f64> = (0..mean.len())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                for i in 0..mean.len() {
                    let z: f64 = rng.sample(StandardNormal);
                    out[i] = mean[i]
                        + crate::math::dot(&chol.row(i)[..=i], &latent[..=i])
                        + sqrt(*iso) * z;
                }
            }
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// Mean of `x_(t-1)` given a noise value `eps`, optionally around a prior
/// mean `f`.
pub fn reverse_mean(
    eps: &[f64],
    f: Option<&[f64]>,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_dim(x_t.len(), eps.len())?;
    if let Some(f) = f {
        check_dim(x_t.len(), f.len())?;
    }
    let co = sched.reverse_coeffs(t)?;
    let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t - 1));
    let (sa, sa_prev, s1a) = (sqrt(ab), sqrt(ab_prev), sqrt(1.0 - ab));
    Ok((0..x_t.len())
        .map(|i| {
            let fi = f.map_or(0.0, |f| f[i]);
            let x0 = (x_t[i] - (1.0 - sa) * fi - s1a * eps[i]) / sa;
            sa_prev * x0 + (1.0 - sa_prev) * fi + co.lambda_t * eps[i]
        })
        .collect())
}

/// Closed-form reverse transition for a distributional head.
///
/// The whole component covariance `gamma_t^2 Sigma_k + sigma_t^2 I` is
/// scaled by `tau`.
pub fn reverse_step(
    dist: &NoiseDist,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    tau: f64,
) -> Result<ReverseTransition> {
    reverse_step_card(dist, None, x_t, t, sched, tau)
}

/// [`reverse_step`] around prior mean `f`.
pub fn reverse_step_card(
    dist: &NoiseDist,
    f: Option<&[f64]>,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    tau: f64,
) -> Result<ReverseTransition> {
    check_tau(tau)?;
    check_dim(dist.dim(), x_t.len())?;
    let co = sched.reverse_coeffs(t)?;
    let (g2, s2) = (co.gamma_t * co.gamma_t, co.sigma_t * co.sigma_t);
    let scaled_factor = |m: &Matrix| {
        let mut m = m.clone();
        m.scale(sqrt(tau) * co.gamma_t.abs());
        m
    };
    let (weights, means, covs) = match dist {
        NoiseDist::Diag(p) => (
            vec![1.0],
            vec![reverse_mean(p.mean(), f, x_t, t, sched)?],
            vec![TransitionCov::Diag(
                p.var().iter().map(|v| tau * (g2 * v + s2)).collect(),
            )],
        ),
        NoiseDist::Mixture(p) => {
            let mut means = Vec::with_capacity(p.len());
            let mut covs = Vec::with_capacity(p.len());
            for c in p.components() {
                means.push(reverse_mean(c.mean(), f, x_t, t, sched)?);
                covs.push(TransitionCov::Diag(
                    c.var().iter().map(|v| tau * (g2 * v + s2)).collect(),
                ));
            }
            (p.weights().to_vec(), means, covs)
        }
        NoiseDist::LowRank(p) => (
            vec![1.0],
            vec![reverse_mean(p.mean(), f, x_t, t, sched)?],
            vec![TransitionCov::LowRank {
                factor: scaled_factor(p.factor()),
                diag: p.diag().iter().map(|v| tau * (g2 * v + s2)).collect(),
            }],
        ),
        NoiseDist::Cholesky(p) => (
            vec![1.0],
            vec![reverse_mean(p.mean(), f, x_t, t, sched)?],
            vec![TransitionCov::CholIso {
                chol: scaled_factor(p.chol()),
                iso: tau * s2,
            }],
        ),
    };
    Ok(ReverseTransition {
        weights,
        means,
        covs,
    })
}

/// The point-prediction baseline: mean from `eps_hat`, covariance
/// `tau sigma_t^2 I`.
pub fn ddim_step(
    eps_hat: &[f64],
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    tau: f64,
) -> Result<ReverseTransition> {
    ddim_step_card(eps_hat, None, x_t, t, sched, tau)
}

pub fn ddim_step_card(
    eps_hat: &[f64],
    f: Option<&[f64]>,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    tau: f64,
) -> Result<ReverseTransition> {
    check_tau(tau)?;
    let mean = reverse_mean(eps_hat, f, x_t, t, sched)?;
    let s2 = {
        let s = sched.sigma(t)?;
        s * s
    };
    Ok(ReverseTransition {
        weights: vec![1.0],
        covs: vec![TransitionCov::Diag(vec![tau * s2; mean.len()])],
        means: vec![mean],
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must lie in (0, 1], got {tau}")))
    }
}

/// `(gamma_0, gamma_1, gamma_2)` of the original CARD posterior mean
/// `gamma_0 y0_hat + gamma_1 y_t + gamma_2 f`.
pub fn card_coefficients(sched: &NoiseSchedule, t: usize) -> Result<(f64, f64, f64)> {
    sched.beta_tilde(t)?;
    let (ab, ab_prev, a, b) = (
        sched.alpha_bar(t),
        sched.alpha_bar(t - 1),
        sched.alpha(t),
        sched.beta(t),
    );
    let g0 = b * sqrt(ab_prev) / (1.0 - ab);
    let g1 = (1.0 - ab_prev) * sqrt(a) / (1.0 - ab);
    let g2 = 1.0 + (sqrt(ab) - 1.0) * (sqrt(a) + sqrt(ab_prev)) / (1.0 - ab);
    Ok((g0, g1, g2))
}

/// Posterior mean of the original CARD update.
pub fn card_mean(
    eps_hat: &[f64],
    f: &[f64],
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_dim(x_t.len(), eps_hat.len())?;
    check_dim(x_t.len(), f.len())?;
    let (g0, g1, g2) = card_coefficients(sched, t)?;
    let ab = sched.alpha_bar(t);
    Ok((0..x_t.len())
        .map(|i| {
            let y0 = (x_t[i] - (1.0 - sqrt(ab)) * f[i] - sqrt(1.0 - ab) * eps_hat[i]) / sqrt(ab);
            g0 * y0 + g1 * x_t[i] + g2 * f[i]
        })
        .collect())
}

/// One original CARD update: the posterior mean plus `sqrt(beta_tilde)`
/// Gaussian noise.
pub fn card_step<R: rand::Rng + ?Sized>(
    eps_hat: &[f64],
    f: &[f64],
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut mean = card_mean(eps_hat, f, x_t, t, sched)?;
    let s = sqrt(sched.beta_tilde(t)?);
    for m in &mut mean {
        let z: f64 = rng.sample(StandardNormal);
        *m += s * z;
    }
    Ok(mean)
}

/// Samples and diagnostics of a batch of reverse paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutput {
    /// `M x d` samples in response units.
    pub samples: Matrix,
    /// `T x d`; row `t - 1` is `Var[eps]` at step `t`, averaged over members,
    /// in standardized units. `None` for heads without a noise distribution.
    pub var_trace: Option<Matrix>,
}

/// Runs `M` reverse paths, member `m` conditioned on `conds[m]`
/// (standardized) and drawing from `rngs[m]`. Returns standardized final
/// states.
fn run_paths(
    ckpt: &ModelCheckpoint,
    conds: &[Vec<f64>],
    rngs: &mut [Rng],
    cfg: &SamplerConfig,
) -> Result<(Matrix, Option<Matrix>)> {
    cfg.validate()?;
    let net = &ckpt.net;
    let ncfg = net.config();
    let sched = ckpt.schedule.with_eta(cfg.eta)?;
    let (m, d, steps) = (conds.len(), ncfg.data_dim, sched.steps());
    let head = ncfg.head;
    let priors: Vec<Vec<f64>> = conds
        .iter()
        .map(|c| ckpt.prior_mean(c))
        .collect::<Result<_>>()?;
    let card = ckpt.prior.is_some();
    let mut x = Matrix::zeros(m, d);
    for (j, rng) in rngs.iter_mut().enumerate() {
        for i in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[(j, i)] = priors[j][i] + z;
        }
    }
    let mut trace = head.is_distributional().then(|| Matrix::zeros(steps, d));
    let mut input = Matrix::zeros(m, ncfg.input_dim());
    let mut aux = vec![0.0; d];
    for t in (1..=steps).rev() {
        for j in 0..m {
            let aux_in = if head == HeadFamily::EsSample {
                for a in aux.iter_mut() {
                    *a = rngs[j].sample(StandardNormal);
                }
                Some(aux.as_slice())
            } else {
                None
            };
            net.write_input(x.row(j), &conds[j], t, aux_in, input.row_mut(j))?;
        }
        let raw = net.mlp().forward(&input)?;
        for j in 0..m {
            let f = card.then(|| priors[j].as_slice());
            let trans = if head.is_distributional() {
                let dist = net.head_dist(raw.row(j))?;
                if let Some(tr) = trace.as_mut() {
                    let (_, v) = dist.mean_and_var();
                    for (acc, vi) in tr.row_mut(t - 1).iter_mut().zip(&v) {
                        *acc += vi / m as f64;
                    }
                }
                reverse_step_card(&dist, f, x.row(j), t, &sched, cfg.tau)?
            } else {
                ddim_step_card(raw.row(j), f, x.row(j), t, &sched, cfg.tau)?
            };
            trans.sample_into(&mut rngs[j], x.row_mut(j));
        }
    }
    Ok((x, trace))
}

/// `cfg.n_samples` reverse paths for one condition `c` given in raw units.
/// Member `m` draws from stream `(case << 32) | m` of `cfg.seed`.
pub fn sample_case(
    ckpt: &ModelCheckpoint,
    c: &[f64],
    cfg: &SamplerConfig,
    case: u64,
) -> Result<PathOutput> {
    ckpt.check_version()?;
    let stats = &ckpt.standardization;
    let cs = stats.standardize_features(c)?;
    let conds = vec![cs; cfg.n_samples];
    let mut rngs: Vec<Rng> = (0..cfg.n_samples as u64)
        .map(|m| seeded_rng(cfg.seed, (case << 32) | m))
        .collect();
    let (x, var_trace) = run_paths(ckpt, &conds, &mut rngs, cfg)?;
    let mut samples = Matrix::zeros(x.rows(), x.cols());
    for j in 0..x.rows() {
        let y = stats.destandardize_targets(x.row(j))?;
        samples.row_mut(j).copy_from_slice(&y);
    }
    Ok(PathOutput { samples, var_trace })
}

pub fn sample_path(ckpt: &ModelCheckpoint, c: &[f64], cfg: &SamplerConfig) -> Result<PathOutput> {
    sample_case(ckpt, c, cfg, 0)
}

/// Epistemic and aleatoric estimates, both per coordinate in response
/// units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub epistemic: Vec<f64>,
    pub aleatoric: Vec<f64>,
}

/// EU from the per-step noise-variance trace of a path (see
/// [`EuWeighting`]), AU as the ensemble variance of the final samples.
pub fn epistemic_estimate(
    path: &PathOutput,
    sched: &NoiseSchedule,
    target_std: &[f64],
    weighting: EuWeighting,
) -> Result<Uncertainty> {
    let trace = path.var_trace.as_ref().ok_or(Error::NoEpistemicEstimate)?;
    check_dim(sched.steps(), trace.rows())?;
    check_dim(trace.cols(), target_std.len())?;
    let steps = trace.rows();
    let mut eu = vec![0.0; trace.cols()];
    for t in 1..=steps {
        let w = match weighting {
            EuWeighting::Unweighted => 1.0,
            EuWeighting::Exact => {
                let (a, ab) = (sched.alpha(t), sched.alpha_bar(t));
                let c = (1.0 - a) / (sqrt(a) * sqrt(1.0 - ab));
                c * c
            }
        };
        for (e, v) in eu.iter_mut().zip(trace.row(t - 1)) {
            *e += w * v / steps as f64;
        }
    }
    for (e, s) in eu.iter_mut().zip(target_std) {
        *e *= s * s;
    }
    let aleatoric = if path.samples.rows() >= 2 {
        crate::metrics::variance(&path.samples)
    } else {
        vec![0.0; path.samples.cols()]
    };
    Ok(Uncertainty {
        epistemic: eu,
        aleatoric,
    })
}

/// Autoregressive ensemble forecast. The model must be trained on
/// conditions `(u_(s-1), u_(s-2))` and increment targets `u_s - u_(s-1)`.
///
/// Returns one `(S + 1) x d_u` trajectory per member, starting at `u0`.
/// Member `m` draws every increment from stream `m` of `cfg.seed`.
pub fn autoregressive_rollout(
    ckpt: &ModelCheckpoint,
    u0: &[f64],
    u_prev: &[f64],
    steps: usize,
    cfg: &SamplerConfig,
) -> Result<Vec<Matrix>> {
    ckpt.check_version()?;
    if steps < 1 {
        return Err(Error::invalid("rollout needs at least one step"));
    }
    let du = u0.len();
    check_dim(du, u_prev.len())?;
    check_dim(2 * du, ckpt.net.config().cond_dim)?;
    check_dim(du, ckpt.net.config().data_dim)?;
    let stats = &ckpt.standardization;
    let m = cfg.n_samples;
    let mut rngs: Vec<Rng> = (0..m as u64).map(|j| seeded_rng(cfg.seed, j)).collect();
    let mut trajs: Vec<Matrix> = (0..m).map(|_| Matrix::zeros(steps + 1, du)).collect();
    let mut prev: Vec<Vec<f64>> = vec![u_prev.to_vec(); m];
    for tr in &mut trajs {
        tr.row_mut(0).copy_from_slice(u0);
    }
    for s in 1..=steps {
        let conds: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let mut c = trajs[j].row(s - 1).to_vec();
                c.extend_from_slice(&prev[j]);
                stats.standardize_features(&c)
            })
            .collect::<Result<_>>()?;
        let (x, _) = run_paths(ckpt, &conds, &mut rngs, cfg)?;
        for j in 0..m {
            let inc = stats.destandardize_targets(x.row(j))?;
            let last = trajs[j].row(s - 1).to_vec();
            prev[j] = last.clone();
            for (o, (u, du)) in trajs[j].row_mut(s).iter_mut().zip(last.iter().zip(&inc)) {
                *o = u + du;
            }
        }
    }
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noisedist::{DiagGaussian, Mixture};

    fn sched(eta: f64) -> NoiseSchedule {
        NoiseSchedule::linear(0.001, 0.35, 50, eta).unwrap()
    }

    fn diag(mean: Vec<f64>, var: Vec<f64>) -> NoiseDist {
        NoiseDist::Diag(DiagGaussian::new(mean, var).unwrap())
    }

    #[test]
    fn last_step_mean_is_denoised_estimate() {
        let s = sched(1.0);
        let dist = diag(vec![0.2, -0.1], vec![0.5, 0.5]);
        let x = [0.7, 1.1];
        let tr = reverse_step(&dist, &x, 1, &s, 1.0).unwrap();
        let ab = s.alpha_bar(1);
        for i in 0..2 {
            let x0 = (x[i] - (1.0 - ab).sqrt() * dist.mean_and_var().0[i]) / ab.sqrt();
            assert_eq!(tr.means[0][i], x0);
        }
    }

    #[test]
    fn zero_covariance_ddim_is_dirac() {
        let s = sched(0.0);
        let tr = ddim_step(&[0.3], &[1.0], 20, &s, 1.0).unwrap();
        assert_eq!(tr.covs[0], TransitionCov::Diag(vec![0.0]));
        let mut rng = seeded_rng(0, 0);
        assert_eq!(tr.sample(&mut rng), tr.means[0]);
    }

    #[test]
    fn learned_variance_exceeds_posterior_variance() {
        let s = sched(1.0);
        for t in 2..=50 {
            let tr = reverse_step(&diag(vec![0.0], vec![0.3]), &[0.5], t, &s, 1.0).unwrap();
            let (_, v) = tr.mean_and_var();
            assert!(v[0] >= s.beta_tilde(t).unwrap());
        }
    }

    #[test]
    fn tau_scales_only_sigma_for_point_heads() {
        let s = sched(1.0);
        let full = ddim_step(&[0.1], &[0.4], 30, &s, 1.0).unwrap();
        let half = ddim_step(&[0.1], &[0.4], 30, &s, 0.5).unwrap();
        assert_eq!(full.means, half.means);
        let (_, a) = full.mean_and_var();
        let (_, b) = half.mean_and_var();
        assert!((b[0] - 0.5 * a[0]).abs() < 1e-15);
        assert!(ddim_step(&[0.1], &[0.4], 30, &s, 0.0).is_err());
        assert!(ddim_step(&[0.1], &[0.4], 30, &s, 1.5).is_err());
    }

    #[test]
    fn tau_monotone_for_distributional_heads() {
        let s = sched(0.5);
        let dist = diag(vec![0.0, 1.0], vec![0.2, 2.0]);
        let mut last = [0.0, 0.0];
        for tau in [0.01, 0.05, 0.2, 0.5, 1.0] {
            let (_, v) = reverse_step(&dist, &[0.3, 0.3], 25, &s, tau)
                .unwrap()
                .mean_and_var();
            assert!(v[0] > last[0] && v[1] > last[1]);
            last = [v[0], v[1]];
        }
    }

    #[test]
    fn single_component_mixture_samples_like_diag() {
        let s = sched(1.0);
        let comp = DiagGaussian::new(vec![0.1, -0.4], vec![0.7, 0.2]).unwrap();
        let d = NoiseDist::Diag(comp.clone());
        let m = NoiseDist::Mixture(Mixture::new(vec![1.0], vec![comp]).unwrap());
        let a = reverse_step(&d, &[0.5, 0.5], 10, &s, 1.0).unwrap();
        let b = reverse_step(&m, &[0.5, 0.5], 10, &s, 1.0).unwrap();
        let (mut ra, mut rb) = (seeded_rng(9, 3), seeded_rng(9, 3));
        for _ in 0..100 {
            assert_eq!(a.sample(&mut ra), b.sample(&mut rb));
        }
    }

    #[test]
    fn ignored_component_is_never_drawn() {
        let s = sched(1.0);
        let m = NoiseDist::Mixture(
            Mixture::new(
                vec![1.0, 0.0],
                vec![
                    DiagGaussian::new(vec![-3.0], vec![0.01]).unwrap(),
                    DiagGaussian::new(vec![3.0], vec![0.01]).unwrap(),
                ],
            )
            .unwrap(),
        );
        let tr = reverse_step(&m, &[0.0], 40, &s, 0.01).unwrap();
        let mut rng = seeded_rng(1, 0);
        let (m0, m1) = (tr.means[0][0], tr.means[1][0]);
        for _ in 0..1000 {
            let x = tr.sample(&mut rng)[0];
            assert!((x - m0).abs() < (x - m1).abs());
        }
    }

    #[test]
    fn card_without_prior_is_ddpm() {
        let s = sched(1.0);
        for t in 1..=50 {
            let a = card_mean(&[0.3, -0.2], &[0.0, 0.0], &[1.0, 0.5], t, &s).unwrap();
            let b = ddim_step(&[0.3, -0.2], &[1.0, 0.5], t, &s, 1.0).unwrap();
            for i in 0..2 {
                assert!((a[i] - b.means[0][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn card_sub_identities() {
        let s = sched(1.0);
        for t in 1..=50 {
            let (g0, g1, g2) = card_coefficients(&s, t).unwrap();
            let (a, ab) = (s.alpha(t), s.alpha_bar(t));
            assert!((g0 / ab.sqrt() + g1 - 1.0 / a.sqrt()).abs() < 1e-12);
            // Coefficient on f: -(1 - sqrt(abar)) g0 / sqrt(abar) + g2
            let b = -(1.0 - ab.sqrt()) * g0 / ab.sqrt() + g2;
            assert!((b + (1.0 - a.sqrt()) / a.sqrt()).abs() < 1e-12, "t = {t}");
            let c = g0 * (1.0 - ab).sqrt() / ab.sqrt();
            assert!((c - (1.0 - a) / (a.sqrt() * (1.0 - ab).sqrt())).abs() < 1e-12);
        }
    }

    #[test]
    fn epistemic_scaling() {
        let s = NoiseSchedule::linear(0.01, 0.2, 4, 1.0).unwrap();
        let mut trace = Matrix::zeros(4, 1);
        for t in 0..4 {
            trace[(t, 0)] = 0.1 * (t + 1) as f64;
        }
        let path = PathOutput {
            samples: Matrix::zeros(3, 1),
            var_trace: Some(trace.clone()),
        };
        let base = epistemic_estimate(&path, &s, &[2.0], EuWeighting::Unweighted).unwrap();
        assert!((base.epistemic[0] - 4.0 * 0.25).abs() < 1e-15);
        let mut doubled = trace;
        doubled.scale(2.0);
        let p2 = PathOutput {
            samples: Matrix::zeros(3, 1),
            var_trace: Some(doubled),
        };
        let b2 = epistemic_estimate(&p2, &s, &[4.0], EuWeighting::Exact).unwrap();
        let b1 = epistemic_estimate(&path, &s, &[2.0], EuWeighting::Exact).unwrap();
        assert!((b2.epistemic[0] - 8.0 * b1.epistemic[0]).abs() < 1e-14);
        let zero = PathOutput {
            samples: Matrix::zeros(3, 1),
            var_trace: Some(Matrix::zeros(4, 1)),
        };
        assert_eq!(
            epistemic_estimate(&zero, &s, &[1.0], EuWeighting::Exact)
                .unwrap()
                .epistemic,
            vec![0.0]
        );
        let point = PathOutput {
            samples: Matrix::zeros(3, 1),
            var_trace: None,
        };
        assert!(matches!(
            epistemic_estimate(&point, &s, &[1.0], EuWeighting::Exact),
            Err(Error::NoEpistemicEstimate)
        ));
    }
}
