//! Noise schedule and the diffusion-time coefficient arithmetic.
//!
//! Steps are 1-based: `t = 1..=T`. `alpha_bar(0)` is defined as 1, which
//! makes the last reverse step use the same formulas as every other step
//! (with `sigma_1 = 0` and `lambda_1 = 0`).

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::sqrt;

/// Radicands this close below zero are rounding noise and clamp to zero.
const RADICAND_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// Length T + 1, `alpha_bars[0] == 1`.
    alpha_bars: Vec<f64>,
    eta: f64,
}

/// Serialized form: the betas and eta. Everything else is derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScheduleSpec {
    betas: Vec<f64>,
    eta: f64,
}

impl TryFrom<ScheduleSpec> for NoiseSchedule {
    type Error = Error;
    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        NoiseSchedule::from_betas(spec.betas, spec.eta)
    }
}

impl From<NoiseSchedule> for ScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        ScheduleSpec {
            betas: s.betas,
            eta: s.eta,
        }
    }
}

/// Coefficients of one reverse step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseCoeffs {
    pub t: usize,
    pub sigma_t: f64,
    /// `sqrt(1 - abar_(t-1) - sigma_t^2)`
    pub lambda_t: f64,
    /// `lambda_t - sqrt(1 - abar_t) / sqrt(alpha_t)`, the factor applied to
    /// the noise when it is mapped into `x_(t-1)`.
    pub gamma_t: f64,
}

fn check_eta(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::invalid(format!("eta must lie in [0, 1], got {eta}")))
    }
}

impl NoiseSchedule {
    /// Betas linearly spaced from `beta1` to `beta_last`, inclusive.
    pub fn linear(beta1: f64, beta_last: f64, steps: usize, eta: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta1 > 0.0 && beta1 <= beta_last && beta_last < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta1 <= betaT < 1, got beta1 = {beta1}, betaT = {beta_last}"
            )));
        }
        let betas = if steps == 1 {
            alloc::vec![beta1]
        } else {
            let step = (beta_last - beta1) / (steps - 1) as f64;
            let mut b: Vec<f64> = (0..steps).map(|i| beta1 + step * i as f64).collect();
            // Pin the endpoint exactly rather than trusting the accumulation.
            b[steps - 1] = beta_last;
            b
        };
        Self::from_betas(betas, eta)
    }

    pub fn from_betas(betas: Vec<f64>, eta: f64) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::invalid(format!("beta {b} outside (0, 1)")));
        }
        check_eta(eta)?;
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
            eta,
        })
    }

    /// Same betas, different eta.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let mut s = self.clone();
        s.eta = eta;
        Ok(s)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= 1 && t <= self.steps() {
            Ok(())
        } else {
            Err(Error::StepOutOfRange {
                t,
                steps: self.steps(),
            })
        }
    }

    /// Panics if `t` is outside `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Panics if `t` is outside `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `t` ranges over `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Posterior variance `(1 - abar_(t-1)) / (1 - abar_t) * beta_t`.
    pub fn beta_tilde(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        Ok((1.0 - ab_prev) / (1.0 - ab) * self.beta(t))
    }

    /// `sigma_t = eta * sqrt(beta_tilde_t)`
    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.eta * sqrt(self.beta_tilde(t)?))
    }

    pub fn reverse_coeffs(&self, t: usize) -> Result<ReverseCoeffs> {
        let sigma_t = self.sigma(t)?;
        let mut radicand = 1.0 - self.alpha_bar(t - 1) - sigma_t * sigma_t;
        if radicand < 0.0 {
            if radicand < -RADICAND_TOLERANCE {
                return Err(Error::DegenerateCoefficients { t, radicand });
            }
            radicand = 0.0;
        }
        let lambda_t = sqrt(radicand);
        let gamma_t = lambda_t - sqrt(1.0 - self.alpha_bar(t)) / sqrt(self.alpha(t));
        Ok(ReverseCoeffs {
            t,
            sigma_t,
            lambda_t,
            gamma_t,
        })
    }

    /// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`
    pub fn forward_perturb(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_step(t)?;
        check_dim(x0.len(), eps.len())?;
        let (a, b) = (sqrt(self.alpha_bar(t)), sqrt(1.0 - self.alpha_bar(t)));
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// Forward perturbation around a prior mean `f`:
    /// `sqrt(abar_t) x0 + (1 - sqrt(abar_t)) f + sqrt(1 - abar_t) eps`.
    pub fn forward_perturb_card(
        &self,
        x0: &[f64],
        f: &[f64],
        t: usize,
        eps: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_step(t)?;
        check_dim(x0.len(), eps.len())?;
        check_dim(x0.len(), f.len())?;
        let a = sqrt(self.alpha_bar(t));
        let b = sqrt(1.0 - self.alpha_bar(t));
        Ok(x0
            .iter()
            .zip(f)
            .zip(eps)
            .map(|((x, m), e)| a * x + (1.0 - a) * m + b * e)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn paper_schedule(eta: f64) -> NoiseSchedule {
        NoiseSchedule::linear(0.001, 0.35, 50, eta).unwrap()
    }

    #[test]
    fn linear_endpoints() {
        let s = paper_schedule(1.0);
        assert_eq!(s.steps(), 50);
        assert_eq!(s.beta(1), 0.001);
        assert_eq!(s.beta(50), 0.35);
        assert!((s.alpha_bar(1) - 0.999).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 2..=50 {
            assert!(s.beta(t) >= s.beta(t - 1));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            let rel = (s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)).abs() / s.alpha_bar(t);
            assert!(rel <= 1e-12);
        }
    }

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(0.2, 0.2, 1, 0.0).unwrap();
        assert_eq!(s.steps(), 1);
        assert!((s.alpha_bar(1) - 0.8).abs() < 1e-16);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(0.0, 0.3, 10, 1.0).is_err());
        assert!(NoiseSchedule::linear(0.1, 1.0, 10, 1.0).is_err());
        assert!(NoiseSchedule::linear(0.3, 0.1, 10, 1.0).is_err());
        assert!(NoiseSchedule::linear(0.1, 0.3, 0, 1.0).is_err());
        assert!(NoiseSchedule::linear(0.1, 0.3, 10, 1.5).is_err());
        assert!(NoiseSchedule::linear(0.1, 0.3, 10, -0.1).is_err());
        let s = paper_schedule(1.0);
        assert!(matches!(s.sigma(0), Err(Error::StepOutOfRange { .. })));
        assert!(s.sigma(51).is_err());
    }

    #[test]
    fn sigma_limits() {
        let ddim = paper_schedule(0.0);
        for t in 1..=50 {
            assert_eq!(ddim.sigma(t).unwrap(), 0.0);
        }
        for eta in [0.0, 0.3, 1.0] {
            assert_eq!(paper_schedule(eta).sigma(1).unwrap(), 0.0);
        }
    }

    #[test]
    fn sigma_step_two_by_hand() {
        // Recompute from the raw betas: beta_1 = 0.001, beta_2 = 0.001 + 0.349/49.
        let b1: f64 = 0.001;
        let b2 = 0.001 + 0.349 / 49.0;
        let ab1 = 1.0 - b1;
        let ab2 = ab1 * (1.0 - b2);
        let want = ((1.0 - ab1) / (1.0 - ab2) * b2).sqrt();
        let got = paper_schedule(1.0).sigma(2).unwrap();
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn reverse_coeffs_cases() {
        let ddim = paper_schedule(0.0);
        for t in 1..=50 {
            let c = ddim.reverse_coeffs(t).unwrap();
            assert_eq!(c.sigma_t, 0.0);
            assert!((c.lambda_t - (1.0 - ddim.alpha_bar(t - 1)).sqrt()).abs() < 1e-15);
        }
        let s = paper_schedule(1.0);
        let c1 = s.reverse_coeffs(1).unwrap();
        assert_eq!(c1.lambda_t, 0.0);
        let want = -(1.0 - s.alpha(1)).sqrt() / s.alpha(1).sqrt();
        assert!((c1.gamma_t - want).abs() < 1e-15);

        // t = 10 recomputed from the raw beta table.
        let betas: Vec<f64> = (0..50).map(|i| 0.001 + 0.349 * i as f64 / 49.0).collect();
        let abar = |t: usize| betas[..t].iter().map(|b| 1.0 - b).product::<f64>();
        let t = 10;
        let bt = (1.0 - abar(t - 1)) / (1.0 - abar(t)) * betas[t - 1];
        let lam = (1.0 - abar(t - 1) - bt).sqrt();
        let gam = lam - (1.0 - abar(t)).sqrt() / (1.0 - betas[t - 1]).sqrt();
        let c = s.reverse_coeffs(t).unwrap();
        assert!((c.lambda_t - lam).abs() < 1e-12);
        assert!((c.gamma_t - gam).abs() < 1e-12);
    }

    #[test]
    fn coefficient_identities() {
        for eta in [0.0, 0.25, 0.7, 1.0] {
            let s = paper_schedule(eta);
            for t in 1..=s.steps() {
                let c = s.reverse_coeffs(t).unwrap();
                assert_eq!(c.sigma_t.to_bits(), s.sigma(t).unwrap().to_bits());
                let sum = c.lambda_t.powi(2) + c.sigma_t.powi(2) + s.alpha_bar(t - 1);
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn radicand_guard() {
        // A schedule whose sigma exceeds the admissible bound: forge eta > 1
        // by bypassing the constructor.
        let mut s = paper_schedule(1.0);
        s.eta = 1.5;
        assert!(matches!(
            s.reverse_coeffs(3),
            Err(Error::DegenerateCoefficients { t: 3, .. })
        ));
    }

    #[test]
    fn forward_perturb_cases() {
        let s = paper_schedule(1.0);
        let x0 = [1.0, -2.0];
        let zero = s.forward_perturb(&x0, 7, &[0.0, 0.0]).unwrap();
        let a = s.alpha_bar(7).sqrt();
        assert_eq!(zero, alloc::vec![a * 1.0, a * -2.0]);
        let late = s.forward_perturb(&x0, 50, &[0.3, 0.4]).unwrap();
        // abar_50 is about 4.3e-5, so x0 leaves a trace of order 1e-2.
        assert!((late[0] - 0.3).abs() < 2e-2 && (late[1] - 0.4).abs() < 2e-2);
        assert!(s.forward_perturb(&x0, 3, &[1.0]).is_err());

        let quarter = NoiseSchedule::from_betas(alloc::vec![0.75], 1.0).unwrap();
        let v = quarter.forward_perturb(&[1.0], 1, &[1.0]).unwrap()[0];
        assert!((v - (0.5 + 0.75f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn card_perturb_cases() {
        let s = paper_schedule(1.0);
        let x0 = [0.5, 1.5];
        let eps = [0.2, -1.0];
        for t in [1, 10, 50] {
            let plain = s.forward_perturb(&x0, t, &eps).unwrap();
            let card = s.forward_perturb_card(&x0, &[0.0, 0.0], t, &eps).unwrap();
            assert_eq!(plain, card);
            let collapsed = s.forward_perturb_card(&x0, &x0, t, &eps).unwrap();
            let b = (1.0 - s.alpha_bar(t)).sqrt();
            for i in 0..2 {
                assert!((collapsed[i] - (x0[i] + b * eps[i])).abs() < 1e-14);
            }
        }
        let nearly_noiseless = NoiseSchedule::from_betas(alloc::vec![1e-300], 1.0).unwrap();
        let v = nearly_noiseless
            .forward_perturb_card(&x0, &[3.0, 3.0], 1, &eps)
            .unwrap();
        assert_eq!(v, x0.to_vec());
    }

    #[test]
    fn forward_marginal_moments() {
        let s = paper_schedule(1.0);
        let mut rng = crate::seeded_rng(11, 0);
        let n = 100_000;
        for t in [1, 5, 25, 50] {
            let x0 = [0.8];
            let (mut m1, mut m2) = (0.0, 0.0);
            for _ in 0..n {
                let e: f64 = rng.sample(StandardNormal);
                let v = s.forward_perturb(&x0, t, &[e]).unwrap()[0];
                m1 += v;
                m2 += v * v;
            }
            let mean = m1 / n as f64;
            let var = m2 / n as f64 - mean * mean;
            let want_mean = s.alpha_bar(t).sqrt() * 0.8;
            let want_var = 1.0 - s.alpha_bar(t);
            assert!((mean - want_mean).abs() < 4.0 * (want_var / n as f64).sqrt());
            // Var of the sample variance of a Gaussian is 2 sigma^4 / n.
            assert!((var - want_var).abs() < 4.0 * want_var * (2.0 / n as f64).sqrt());
        }
    }
}
