//! The learned noise-distribution families and their parameter transforms.
//!
//! Every family is a (degenerate) Gaussian mixture over the forward-process
//! noise: a diagonal Gaussian, a diagonal Gaussian mixture with
//! input-dependent weights, or a multivariate Gaussian with either a
//! low-rank-plus-diagonal or a Cholesky covariance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix};
use crate::math::{all_finite, exp, ln, sigmoid, softplus, sqrt};

/// Lower bound on every variance-like parameter.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    /// Variances below [`VARIANCE_FLOOR`] are raised to it.
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), var.len())?;
        if !all_finite(&mean) || !all_finite(&var) {
            return Err(Error::NonFinite("diagonal Gaussian parameters"));
        }
        let var = var.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        Ok(DiagGaussian { mean, var })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, m), v) in out.iter_mut().zip(&self.mean).zip(&self.var) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + sqrt(*v) * z;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    weights: Vec<f64>,
    components: Vec<DiagGaussian>,
}

impl Mixture {
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        check_dim(weights.len(), components.len())?;
        let d = components[0].dim();
        for c in &components {
            check_dim(d, c.dim())?;
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(Mixture {
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Coordinate `i` as a univariate mixture `(weights, means, variances)`.
    pub fn marginal(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let means = self.components.iter().map(|c| c.mean[i]).collect();
        let vars = self.components.iter().map(|c| c.var[i]).collect();
        (means, vars)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankGaussian {
    mean: Vec<f64>,
    /// d x r
    factor: Matrix,
    diag: Vec<f64>,
}

impl LowRankGaussian {
    /// Covariance `factor * factor^T + diag(diag)`; the diagonal is floored.
    pub fn new(mean: Vec<f64>, factor: Matrix, diag: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), factor.rows())?;
        check_dim(mean.len(), diag.len())?;
        if !all_finite(&mean) || !all_finite(factor.as_slice()) || !all_finite(&diag) {
            return Err(Error::NonFinite("low-rank Gaussian parameters"));
        }
        let diag = diag.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        Ok(LowRankGaussian { mean, factor, diag })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn rank(&self) -> usize {
        self.factor.cols()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn dense_cov(&self) -> Matrix {
        let mut s = self.factor.gram();
        for i in 0..self.dim() {
            s[(i, i)] += self.diag[i];
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyGaussian {
    mean: Vec<f64>,
    /// Lower triangular with positive diagonal.
    chol: Matrix,
}

impl CholeskyGaussian {
    /// `chol` must be lower triangular with positive diagonal and strictly
    /// lower columns of norm at most one. The diagonal is floored.
    pub fn new(mean: Vec<f64>, mut chol: Matrix) -> Result<Self> {
        let d = mean.len();
        check_dim(d, chol.rows())?;
        check_dim(d, chol.cols())?;
        if !all_finite(&mean) || !all_finite(chol.as_slice()) {
            return Err(Error::NonFinite("Cholesky Gaussian parameters"));
        }
        for j in 0..d {
            if chol[(j, j)] <= 0.0 {
                return Err(Error::invalid("Cholesky factor needs a positive diagonal"));
            }
            chol[(j, j)] = chol[(j, j)].max(VARIANCE_FLOOR);
            let mut norm2 = 0.0;
            for i in 0..d {
                let v = chol[(i, j)];
                if i < j && v != 0.0 {
                    return Err(Error::invalid("Cholesky factor must be lower triangular"));
                }
                if i > j {
                    norm2 += v * v;
                }
            }
            if norm2 > 1.0 + 1e-12 {
                return Err(Error::invalid("strictly lower column norm exceeds one"));
            }
        }
        Ok(CholeskyGaussian { mean, chol })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn dense_cov(&self) -> Matrix {
        self.chol.gram()
    }
}

/// Any member of the noise-distribution family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseDist {
    Diag(DiagGaussian),
    Mixture(Mixture),
    LowRank(LowRankGaussian),
    Cholesky(CholeskyGaussian),
}

impl NoiseDist {
    pub fn dim(&self) -> usize {
        match self {
            NoiseDist::Diag(p) => p.dim(),
            NoiseDist::Mixture(p) => p.dim(),
            NoiseDist::LowRank(p) => p.dim(),
            NoiseDist::Cholesky(p) => p.dim(),
        }
    }

    /// Exact mean and per-coordinate variance. For mixtures this is the
    /// total variance `sum pi_k (s_k^2 + m_k^2) - (sum pi_k m_k)^2`.
    pub fn mean_and_var(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            NoiseDist::Diag(p) => (p.mean.clone(), p.var.clone()),
            NoiseDist::Mixture(p) => {
                let d = p.dim();
                let mut mean = vec![0.0; d];
                let mut second = vec![0.0; d];
                for (w, c) in p.weights.iter().zip(&p.components) {
                    for i in 0..d {
                        mean[i] += w * c.mean[i];
                        second[i] += w * (c.var[i] + c.mean[i] * c.mean[i]);
                    }
                }
                let var = second
                    .iter()
                    .zip(&mean)
                    .map(|(s, m)| (s - m * m).max(0.0))
                    .collect();
                (mean, var)
            }
            NoiseDist::LowRank(p) => {
                let var = (0..p.dim())
                    .map(|i| p.factor.row(i).iter().map(|u| u * u).sum::<f64>() + p.diag[i])
                    .collect();
                (p.mean.clone(), var)
            }
            NoiseDist::Cholesky(p) => {
                let var = (0..p.dim())
                    .map(|i| p.chol.row(i)[..=i].iter().map(|l| l * l).sum())
                    .collect();
                (p.mean.clone(), var)
            }
        }
    }

    /// One draw into `out`. Mixtures consume one uniform for the component
    /// choice before the Gaussian draw.
    pub fn sample_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            NoiseDist::Diag(p) => p.sample_into(rng, out),
            NoiseDist::Mixture(p) => {
                let k = categorical(&p.weights, rng.random::<f64>());
                p.components[k].sample_into(rng, out);
            }
            NoiseDist::LowRank(p) => {
                let r = p.rank();
                let latent: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..p.dim() {
                    let xi: f64 = rng.sample(StandardNormal);
                    out[i] = p.mean[i]
                        + crate::math::dot(p.factor.row(i), &latent)
                        + sqrt(p.diag[i]) * xi;
                }
            }
            NoiseDist::Cholesky(p) => {
                let z: Vec<f64> = (0..p.dim()).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..p.dim() {
                    out[i] = p.mean[i] + crate::math::dot(&p.chol.row(i)[..=i], &z[..=i]);
                }
            }
        }
    }

    /// `n` i.i.d. draws as the rows of an `n x d` matrix.
    pub fn sample<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix {
        let mut out = Matrix::zeros(n, self.dim());
        for i in 0..n {
            self.sample_into(rng, out.row_mut(i));
        }
        out
    }
}

/// Index of the component selected by uniform draw `u` in `[0, 1)`.
pub(crate) fn categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding gap above the last cumulative sum; give it to
    // the last component that has any mass.
    weights
        .iter()
        .rposition(|w| *w > 0.0)
        .unwrap_or(weights.len() - 1)
}

fn check_finite(xs: &[f64], what: &'static str) -> Result<()> {
    if all_finite(xs) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `sigma^2 = softplus(raw_s) + 1e-6`
pub fn transform_diag(raw_mu: &[f64], raw_s: &[f64]) -> Result<DiagGaussian> {
    check_dim(raw_mu.len(), raw_s.len())?;
    check_finite(raw_mu, "raw mean")?;
    check_finite(raw_s, "raw variance")?;
    let var = raw_s
        .iter()
        .map(|s| softplus(*s) + VARIANCE_FLOOR)
        .collect();
    Ok(DiagGaussian {
        mean: raw_mu.to_vec(),
        var,
    })
}

pub fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|r| exp(r - max)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Softmax weights over `K` components whose raw means and raw variances
/// are stacked row-wise in `K x d` slices.
pub fn transform_mixture(raw_w: &[f64], raw_mu: &[f64], raw_s: &[f64]) -> Result<Mixture> {
    let k = raw_w.len();
    if k == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    check_finite(raw_w, "raw mixture weights")?;
    check_dim(raw_mu.len(), raw_s.len())?;
    if raw_mu.len() % k != 0 {
        return Err(Error::DimensionMismatch {
            expected: k * (raw_mu.len() / k),
            found: raw_mu.len(),
        });
    }
    let d = raw_mu.len() / k;
    let components = raw_mu
        .chunks_exact(d.max(1))
        .zip(raw_s.chunks_exact(d.max(1)))
        .take(k)
        .map(|(m, s)| transform_diag(m, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Mixture {
        weights: softmax(raw_w),
        components,
    })
}

/// Unconstrained factor, softplus-plus-floor diagonal. `raw_u` is `d x r`
/// row-major.
pub fn transform_lowrank(raw_mu: &[f64], raw_u: &[f64], raw_d: &[f64]) -> Result<LowRankGaussian> {
    let d = raw_mu.len();
    check_dim(d, raw_d.len())?;
    check_finite(raw_mu, "raw mean")?;
    check_finite(raw_u, "raw low-rank factor")?;
    check_finite(raw_d, "raw diagonal")?;
    if d == 0 || raw_u.len() % d != 0 {
        return Err(Error::invalid("low-rank factor must be d x r"));
    }
    let factor = Matrix::from_vec(d, raw_u.len() / d, raw_u.to_vec())?;
    let diag = raw_d
        .iter()
        .map(|s| softplus(*s) + VARIANCE_FLOOR)
        .collect();
    Ok(LowRankGaussian {
        mean: raw_mu.to_vec(),
        factor,
        diag,
    })
}

/// Builds `L` from the lower triangle of `raw_l` (the upper part is ignored):
/// softplus-plus-floor on the diagonal, and every strictly-lower column whose
/// Euclidean norm exceeds one is scaled back to unit norm.
pub fn transform_cholesky(raw_mu: &[f64], raw_l: &Matrix) -> Result<CholeskyGaussian> {
    let d = raw_mu.len();
    check_dim(d, raw_l.rows())?;
    check_dim(d, raw_l.cols())?;
    check_finite(raw_mu, "raw mean")?;
    check_finite(raw_l.as_slice(), "raw Cholesky factor")?;
    let mut chol = Matrix::zeros(d, d);
    for j in 0..d {
        chol[(j, j)] = softplus(raw_l[(j, j)]) + VARIANCE_FLOOR;
        let norm = sqrt(
            (j + 1..d)
                .map(|i| raw_l[(i, j)] * raw_l[(i, j)])
                .sum::<f64>(),
        );
        let scale = if norm > 1.0 { 1.0 / norm } else { 1.0 };
        for i in j + 1..d {
            chol[(i, j)] = raw_l[(i, j)] * scale;
        }
    }
    Ok(CholeskyGaussian {
        mean: raw_mu.to_vec(),
        chol,
    })
}

/// Chain rule through `softplus(raw) + floor`.
pub(crate) fn softplus_backward(raw: &[f64], grad_out: &[f64], grad_raw: &mut [f64]) {
    for ((g, r), go) in grad_raw.iter_mut().zip(raw).zip(grad_out) {
        *g = go * sigmoid(*r);
    }
}

/// Chain rule through softmax: `g_raw = w * (g - <w, g>)`.
pub(crate) fn softmax_backward(weights: &[f64], grad_w: &[f64], grad_raw: &mut [f64]) {
    let inner = crate::math::dot(weights, grad_w);
    for ((g, w), gw) in grad_raw.iter_mut().zip(weights).zip(grad_w) {
        *g = w * (gw - inner);
    }
}

/// Chain rule through [`transform_cholesky`]; `grad_l` is the gradient with
/// respect to the produced `L`, written back as a gradient on `raw_l`'s
/// lower triangle.
pub(crate) fn cholesky_backward(raw_l: &Matrix, grad_l: &Matrix) -> Matrix {
    let d = raw_l.rows();
    let mut g = Matrix::zeros(d, d);
    for j in 0..d {
        g[(j, j)] = grad_l[(j, j)] * sigmoid(raw_l[(j, j)]);
        let col: Vec<f64> = (j + 1..d).map(|i| raw_l[(i, j)]).collect();
        let gcol: Vec<f64> = (j + 1..d).map(|i| grad_l[(i, j)]).collect();
        let norm = crate::math::norm2(&col);
        if norm > 1.0 {
            // d(v / |v|) = (I - u u^T) / |v|, u = v / |v|
            let proj = crate::math::dot(&col, &gcol) / (norm * norm);
            for (idx, i) in (j + 1..d).enumerate() {
                g[(i, j)] = (gcol[idx] - col[idx] * proj) / norm;
            }
        } else {
            for (idx, i) in (j + 1..d).enumerate() {
                g[(i, j)] = gcol[idx];
            }
        }
    }
    g
}

/// `I + c * Sigma`, factored once for repeated solves.
#[derive(Debug, Clone)]
pub(crate) enum ShiftedSystem {
    Diag {
        diag: Vec<f64>,
    },
    LowRank {
        /// `1 + c * dvec`
        diag: Vec<f64>,
        /// `sqrt(c) * U`
        w: Matrix,
        /// Cholesky factor of `I_r + W^T D'^-1 W`
        cap: Matrix,
    },
    Dense {
        chol: Matrix,
    },
}

impl ShiftedSystem {
    pub(crate) fn new(dist: &NoiseDist, c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::invalid(format!(
                "shift must be nonnegative, got {c}"
            )));
        }
        match dist {
            NoiseDist::Diag(p) => Ok(ShiftedSystem::Diag {
                diag: p.var.iter().map(|v| 1.0 + c * v).collect(),
            }),
            NoiseDist::LowRank(p) => {
                let (d, r) = (p.dim(), p.rank());
                let diag: Vec<f64> = p.diag.iter().map(|v| 1.0 + c * v).collect();
                let mut w = p.factor.clone();
                w.scale(sqrt(c));
                let mut cap = Matrix::identity(r);
                for a in 0..r {
                    for b in 0..=a {
                        let s: f64 = (0..d).map(|i| w[(i, a)] * w[(i, b)] / diag[i]).sum();
                        cap[(a, b)] += s;
                        if a != b {
                            cap[(b, a)] += s;
                        }
                    }
                }
                let cap = linalg::cholesky(&cap).expect("capacitance matrix is SPD for c >= 0");
                Ok(ShiftedSystem::LowRank { diag, w, cap })
            }
            NoiseDist::Cholesky(p) => {
                let mut a = p.chol.gram();
                a.scale(c);
                for i in 0..p.dim() {
                    a[(i, i)] += 1.0;
                }
                let chol = linalg::cholesky(&a).expect("I + c L L^T is SPD for c >= 0");
                Ok(ShiftedSystem::Dense { chol })
            }
            NoiseDist::Mixture(_) => Err(Error::invalid(
                "shifted solves are defined for single Gaussians, not mixtures",
            )),
        }
    }

    pub(crate) fn logdet(&self) -> f64 {
        match self {
            ShiftedSystem::Diag { diag } => diag.iter().map(|x| ln(*x)).sum(),
            ShiftedSystem::LowRank { diag, cap, .. } => {
                diag.iter().map(|x| ln(*x)).sum::<f64>() + linalg::cholesky_logdet(cap)
            }
            ShiftedSystem::Dense { chol } => linalg::cholesky_logdet(chol),
        }
    }

    pub(crate) fn solve(&self, v: &[f64]) -> Vec<f64> {
        match self {
            ShiftedSystem::Diag { diag } => v.iter().zip(diag).map(|(x, a)| x / a).collect(),
            ShiftedSystem::LowRank { diag, w, cap } => {
                // Woodbury: A^-1 v = z - D'^-1 W C^-1 W^T z, z = D'^-1 v.
                let z: Vec<f64> = v.iter().zip(diag).map(|(x, a)| x / a).collect();
                let r = w.cols();
                let mut wtz = vec![0.0; r];
                for (i, zi) in z.iter().enumerate() {
                    for (acc, wv) in wtz.iter_mut().zip(w.row(i)) {
                        *acc += wv * zi;
                    }
                }
                let y = linalg::cholesky_solve(cap, &wtz);
                z.iter()
                    .enumerate()
                    .map(|(i, zi)| zi - crate::math::dot(w.row(i), &y) / diag[i])
                    .collect()
            }
            ShiftedSystem::Dense { chol } => linalg::cholesky_solve(chol, v),
        }
    }

    /// Diagonal of `(I + c Sigma)^-1`.
    pub(crate) fn inverse_diag(&self) -> Vec<f64> {
        match self {
            ShiftedSystem::Diag { diag } => diag.iter().map(|a| 1.0 / a).collect(),
            ShiftedSystem::LowRank { diag, w, cap } => {
                // (D'^-1)_ii - (D'^-1 W C^-1 W^T D'^-1)_ii
                (0..diag.len())
                    .map(|i| {
                        let row: Vec<f64> = w.row(i).iter().map(|x| x / diag[i]).collect();
                        let y = linalg::cholesky_solve(cap, &row);
                        1.0 / diag[i] - crate::math::dot(&row, &y)
                    })
                    .collect()
            }
            ShiftedSystem::Dense { chol } => {
                let inv = linalg::cholesky_inverse(chol);
                (0..chol.rows()).map(|i| inv[(i, i)]).collect()
            }
        }
    }
}

/// `((I + c Sigma)^-1 v, log det(I + c Sigma))` for a single Gaussian.
///
/// Low-rank covariances go through Woodbury and the matrix determinant
/// lemma on `diag(1 + c dvec) + c U U^T` in `O(d r^2 + r^3)`; Cholesky
/// covariances factor `I + c L L^T` densely.
pub fn solve_and_logdet(dist: &NoiseDist, c: f64, v: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_dim(dist.dim(), v.len())?;
    if c == 0.0 {
        return Ok((v.to_vec(), 0.0));
    }
    let sys = ShiftedSystem::new(dist, c)?;
    Ok((sys.solve(v), sys.logdet()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{ln, softplus};
    use std::vec::Vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn diag_transform_values() {
        let p = transform_diag(&[0.0, 1.0], &[0.0, 0.0]).unwrap();
        for v in p.var() {
            assert!(close(*v, ln(2.0) + 1e-6, 1e-15));
        }
        let p = transform_diag(&[0.0], &[-800.0]).unwrap();
        assert!(close(p.var()[0], 1e-6, 1e-12));
        // ln(1 + e) evaluated independently: 1.31326168751822283...
        let p = transform_diag(&[0.0], &[1.0]).unwrap();
        assert!((p.var()[0] - 1.313_262_687_518_222_8).abs() < 1e-14);
        assert!(transform_diag(&[0.0], &[f64::NAN]).is_err());
        assert!(transform_diag(&[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn mixture_transform_values() {
        let m = transform_mixture(&[0.3, 0.3, 0.3], &[0.0; 6], &[0.0; 6]).unwrap();
        for w in m.weights() {
            assert!(close(*w, 1.0 / 3.0, 1e-15));
        }
        let m = transform_mixture(&[4.2], &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(m.weights(), &[1.0]);
        let m = transform_mixture(&[0.0, ln(3.0)], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(close(m.weights()[0], 0.25, 1e-15));
        assert!(close(m.weights()[1], 0.75, 1e-15));
        assert!(transform_mixture(&[], &[], &[]).is_err());
        assert!(transform_mixture(&[f64::INFINITY, 0.0], &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn cholesky_transform_values() {
        let c = transform_cholesky(&[0.0; 3], &Matrix::zeros(3, 3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { ln(2.0) + 1e-6 } else { 0.0 };
                assert!(close(c.chol()[(i, j)], want, 1e-15));
            }
        }
        // d = 1: L^2 equals the diagonal transform's variance up to the
        // floor being applied before squaring.
        let raw = 0.37;
        let c =
            transform_cholesky(&[0.0], &Matrix::from_vec(1, 1, alloc::vec![raw]).unwrap()).unwrap();
        let l = softplus(raw) + 1e-6;
        assert!(close(c.chol()[(0, 0)], l, 1e-15));
        let raw_l = Matrix::from_rows(&[
            alloc::vec![0.1, 9.0, 9.0],
            alloc::vec![3.0, -0.2, 9.0],
            alloc::vec![4.0, 0.5, 0.3],
        ])
        .unwrap();
        let c = transform_cholesky(&[0.0; 3], &raw_l).unwrap();
        // First column (3, 4) has norm 5 and is normalised; second (0.5) is kept.
        assert!(close(c.chol()[(1, 0)], 0.6, 1e-15));
        assert!(close(c.chol()[(2, 0)], 0.8, 1e-15));
        assert!(close(c.chol()[(2, 1)], 0.5, 1e-15));
        assert_eq!(c.chol()[(0, 1)], 0.0);
    }

    #[test]
    fn moments() {
        let one = Mixture::new(
            alloc::vec![1.0],
            alloc::vec![DiagGaussian::new(alloc::vec![0.3], alloc::vec![2.0]).unwrap()],
        )
        .unwrap();
        let (m, v) = NoiseDist::Mixture(one).mean_and_var();
        assert!(close(m[0], 0.3, 1e-15) && close(v[0], 2.0, 1e-15));

        let two_point = Mixture::new(
            alloc::vec![0.5, 0.5],
            alloc::vec![
                DiagGaussian::new(alloc::vec![-1.0], alloc::vec![0.0]).unwrap(),
                DiagGaussian::new(alloc::vec![1.0], alloc::vec![0.0]).unwrap(),
            ],
        )
        .unwrap();
        let (m, v) = NoiseDist::Mixture(two_point).mean_and_var();
        assert!(m[0].abs() < 1e-15);
        // Floored component variances contribute 1e-6.
        assert!(close(v[0], 1.0, 2e-6));

        let uneven = Mixture::new(
            alloc::vec![0.25, 0.75],
            alloc::vec![
                DiagGaussian::new(alloc::vec![0.0], alloc::vec![1.0]).unwrap(),
                DiagGaussian::new(alloc::vec![2.0], alloc::vec![1.0]).unwrap(),
            ],
        )
        .unwrap();
        let (m, v) = NoiseDist::Mixture(uneven).mean_and_var();
        assert!(close(m[0], 1.5, 1e-15));
        assert!(close(v[0], 1.75, 1e-15));
    }

    #[test]
    fn solve_and_logdet_cases() {
        let u = Matrix::from_rows(&[alloc::vec![1.0], alloc::vec![0.0]]).unwrap();
        let lr = NoiseDist::LowRank(
            LowRankGaussian::new(alloc::vec![0.0; 2], u, alloc::vec![1.0, 2.0]).unwrap(),
        );
        let (x, ld) = solve_and_logdet(&lr, 1.0, &[3.0, 6.0]).unwrap();
        assert!(close(ld, 2.0 * ln(3.0), 1e-14));
        assert!(close(x[0], 1.0, 1e-14) && close(x[1], 2.0, 1e-14));

        let (x, ld) = solve_and_logdet(&lr, 0.0, &[3.0, 6.0]).unwrap();
        assert_eq!((x, ld), (alloc::vec![3.0, 6.0], 0.0));

        let flat = NoiseDist::LowRank(
            LowRankGaussian::new(
                alloc::vec![0.0; 3],
                Matrix::zeros(3, 1),
                alloc::vec![0.5, 1.0, 4.0],
            )
            .unwrap(),
        );
        let c = 0.7;
        let (x, ld) = solve_and_logdet(&flat, c, &[1.0, 1.0, 1.0]).unwrap();
        let want: f64 = [0.5, 1.0, 4.0]
            .iter()
            .map(|d: &f64| (1.0 + c * d).ln())
            .sum();
        assert!(close(ld, want, 1e-14));
        for (xi, d) in x.iter().zip([0.5, 1.0, 4.0]) {
            assert!(close(*xi, 1.0 / (1.0 + c * d), 1e-14));
        }
        assert!(solve_and_logdet(&flat, -1.0, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn categorical_edges() {
        assert_eq!(categorical(&[1.0, 0.0], 0.999_999), 0);
        assert_eq!(categorical(&[0.5, 0.5], 0.5), 1);
        assert_eq!(categorical(&[0.5, 0.5 - 1e-17, 0.0], 1.0 - 1e-18), 1);
    }

    #[test]
    fn near_dirac_and_degenerate_mixture_sampling() {
        let mut rng = crate::seeded_rng(3, 0);
        let dirac = NoiseDist::Diag(
            DiagGaussian::new(alloc::vec![2.0, -1.0], alloc::vec![0.0, 0.0]).unwrap(),
        );
        let s = dirac.sample(200, &mut rng);
        for row in s.iter_rows() {
            assert!((row[0] - 2.0).abs() < 0.01 && (row[1] + 1.0).abs() < 0.01);
        }
        let mix = NoiseDist::Mixture(
            Mixture::new(
                alloc::vec![1.0, 0.0],
                alloc::vec![
                    DiagGaussian::new(alloc::vec![-5.0], alloc::vec![0.01]).unwrap(),
                    DiagGaussian::new(alloc::vec![5.0], alloc::vec![0.01]).unwrap(),
                ],
            )
            .unwrap(),
        );
        let s: Vec<f64> = mix.sample(5000, &mut rng).into_vec();
        assert!(s.iter().all(|x| *x < 0.0));
    }
}
