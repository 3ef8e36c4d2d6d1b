//! Datasets, seeded splits, standardization and synthetic generators.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::math::{sin, sqrt, PI};
use crate::seeded_rng;

const STD_FLOOR: f64 = 1e-12;

/// Default `(train, validation, test)` fractions: a 90/10 train/test split
/// with a tenth of the training part held out for validation.
pub const DEFAULT_RATIOS: [f64; 3] = [0.81, 0.09, 0.10];

/// Per-column affine maps fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl Standardization {
    /// The identity map for the given dimensions.
    pub fn identity(cond_dim: usize, data_dim: usize) -> Self {
        Standardization {
            feature_mean: vec![0.0; cond_dim],
            feature_std: vec![1.0; cond_dim],
            target_mean: vec![0.0; data_dim],
            target_std: vec![1.0; data_dim],
        }
    }

    /// Population mean and standard deviation of the given rows.
    pub fn fit(features: &Matrix, targets: &Matrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (feature_mean, feature_std) = column_stats(features, rows);
        let (target_mean, target_std) = column_stats(targets, rows);
        Ok(Standardization {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
        })
    }

    pub fn standardize_features(&self, c: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.feature_mean.len(), c.len())?;
        Ok(c.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    pub fn standardize_targets(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.target_mean.len(), y.len())?;
        Ok(y.iter()
            .zip(&self.target_mean)
            .zip(&self.target_std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    pub fn destandardize_targets(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.target_mean.len(), z.len())?;
        Ok(z.iter()
            .zip(&self.target_mean)
            .zip(&self.target_std)
            .map(|((x, m), s)| x * s + m)
            .collect())
    }

    pub fn destandardize_features(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.feature_mean.len(), z.len())?;
        Ok(z.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((x, m), s)| x * s + m)
            .collect())
    }
}

fn column_stats(m: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; m.cols()];
    for &r in rows {
        for (acc, v) in mean.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let mut var = vec![0.0; m.cols()];
    for &r in rows {
        for ((acc, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let std = var
        .into_iter()
        .map(|v| sqrt(v / n).max(STD_FLOOR))
        .collect();
    (mean, std)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `N x d_c`
    pub features: Matrix,
    /// `N x d`
    pub targets: Matrix,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub split: Option<Split>,
    /// Set once the data has been standardized in place.
    pub stats: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        targets: Matrix,
        feature_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        check_dim(features.rows(), targets.rows())?;
        check_dim(features.cols(), feature_names.len())?;
        check_dim(targets.cols(), target_names.len())?;
        if targets.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if targets.cols() == 0 {
            return Err(Error::invalid("dataset needs at least one target column"));
        }
        Ok(Dataset {
            features,
            targets,
            feature_names,
            target_names,
            split: None,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cond_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn data_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn indices(&self, part: Part) -> Result<&[usize]> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has not been split"))?;
        Ok(match part {
            Part::Train => &split.train,
            Part::Val => &split.val,
            Part::Test => &split.test,
        })
    }

    /// `(features, targets)` restricted to `rows`.
    pub fn subset(&self, rows: &[usize]) -> (Matrix, Matrix) {
        let pick = |m: &Matrix| {
            let mut out = Matrix::zeros(rows.len(), m.cols());
            for (i, &r) in rows.iter().enumerate() {
                out.row_mut(i).copy_from_slice(m.row(r));
            }
            out
        };
        (pick(&self.features), pick(&self.targets))
    }

    pub fn part(&self, part: Part) -> Result<(Matrix, Matrix)> {
        Ok(self.subset(self.indices(part)?))
    }
}

/// Splits with a seeded permutation and standardizes every column with the
/// statistics of the training part. `ratios` are `(train, val, test)`
/// fractions; a part with a positive fraction must get at least two rows.
pub fn split_standardize(mut ds: Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    if ds.stats.is_some() {
        return Err(Error::invalid("dataset is already standardized"));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be nonnegative and sum to 1, got {ratios:?}"
        )));
    }
    let n = ds.len();
    let n_test = libm::round(ratios[2] * n as f64) as usize;
    let n_val = libm::round(ratios[1] * n as f64) as usize;
    if n_test + n_val > n {
        return Err(Error::invalid("split ratios leave no training rows"));
    }
    let n_train = n - n_test - n_val;
    for (name, count, ratio) in [
        ("train", n_train, ratios[0]),
        ("validation", n_val, ratios[1]),
        ("test", n_test, ratios[2]),
    ] {
        if ratio > 0.0 && count < 2 {
            return Err(Error::invalid(format!(
                "{name} split would hold {count} rows; need at least 2"
            )));
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded_rng(seed, 0));
    let split = Split {
        train: perm[..n_train].to_vec(),
        val: perm[n_train..n_train + n_val].to_vec(),
        test: perm[n_train + n_val..].to_vec(),
        seed,
    };
    let stats = Standardization::fit(&ds.features, &ds.targets, &split.train)?;
    for r in 0..n {
        let c = stats.standardize_features(ds.features.row(r))?;
        ds.features.row_mut(r).copy_from_slice(&c);
        let y = stats.standardize_targets(ds.targets.row(r))?;
        ds.targets.row_mut(r).copy_from_slice(&y);
    }
    ds.split = Some(split);
    ds.stats = Some(stats);
    Ok(ds)
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// `y = sin(2 pi c) + (0.1 + 0.4 c^2) eps`, `c ~ U(-1, 1)`.
pub fn gen_heteroscedastic(n: usize, seed: u64) -> Result<Dataset> {
    gen_heteroscedastic_on(n, seed, -1.0, 1.0)
}

/// [`gen_heteroscedastic`] with `c ~ U(lo, hi)`.
pub fn gen_heteroscedastic_on(n: usize, seed: u64, lo: f64, hi: f64) -> Result<Dataset> {
    if !(lo < hi) {
        return Err(Error::invalid("need lo < hi"));
    }
    let mut rng = seeded_rng(seed, 0);
    let mut c = Matrix::zeros(n, 1);
    let mut y = Matrix::zeros(n, 1);
    for i in 0..n {
        let ci = lo + (hi - lo) * rng.random::<f64>();
        let e: f64 = rng.sample(StandardNormal);
        c[(i, 0)] = ci;
        y[(i, 0)] = heteroscedastic_mean(ci) + heteroscedastic_std(ci) * e;
    }
    Dataset::new(c, y, names("c_", 1), names("y_", 1))
}

pub fn heteroscedastic_mean(c: f64) -> f64 {
    sin(2.0 * PI * c)
}

pub fn heteroscedastic_std(c: f64) -> f64 {
    0.1 + 0.4 * c * c
}

/// `y = s (1 + 0.1 eps)` with a fair random sign `s`, independent of
/// `c ~ U(-1, 1)`.
pub fn gen_bimodal(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeded_rng(seed, 0);
    let mut c = Matrix::zeros(n, 1);
    let mut y = Matrix::zeros(n, 1);
    for i in 0..n {
        c[(i, 0)] = -1.0 + 2.0 * rng.random::<f64>();
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let e: f64 = rng.sample(StandardNormal);
        y[(i, 0)] = s * (1.0 + 0.1 * e);
    }
    Dataset::new(c, y, names("c_", 1), names("y_", 1))
}

pub const LOGISTIC_R: f64 = 3.9;
pub const DYNAMICS_NOISE: f64 = 0.01;

/// One step of the noisy logistic map, clipped to `[0, 1]`.
pub fn logistic_step(u: f64, noise: f64, eps: f64) -> f64 {
    (LOGISTIC_R * u * (1.0 - u) + noise * eps).clamp(0.0, 1.0)
}

/// `n` trajectories of `steps + 1` states each, `u_0 ~ U(0.05, 0.95)`.
pub fn logistic_trajectories(n: usize, steps: usize, seed: u64, noise: f64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed, 0);
    (0..n)
        .map(|_| {
            let mut u = Vec::with_capacity(steps + 1);
            u.push(0.05 + 0.9 * rng.random::<f64>());
            for s in 0..steps {
                let e: f64 = rng.sample(StandardNormal);
                u.push(logistic_step(u[s], noise, e));
            }
            u
        })
        .collect()
}

/// Pairs `((u_(s-1), u_(s-2)), u_s - u_(s-1))` from noisy logistic-map
/// trajectories.
pub fn gen_dynamics(trajectories: usize, steps: usize, seed: u64) -> Result<Dataset> {
    gen_dynamics_with_noise(trajectories, steps, seed, DYNAMICS_NOISE)
}

pub fn gen_dynamics_with_noise(
    trajectories: usize,
    steps: usize,
    seed: u64,
    noise: f64,
) -> Result<Dataset> {
    if steps < 2 {
        return Err(Error::invalid(
            "dynamics need at least two steps per trajectory",
        ));
    }
    let trajs = logistic_trajectories(trajectories, steps, seed, noise);
    let rows = trajectories * (steps - 1);
    let mut c = Matrix::zeros(rows, 2);
    let mut y = Matrix::zeros(rows, 1);
    let mut r = 0;
    for u in &trajs {
        for s in 2..=steps {
            c[(r, 0)] = u[s - 1];
            c[(r, 1)] = u[s - 2];
            y[(r, 0)] = u[s] - u[s - 1];
            r += 1;
        }
    }
    Dataset::new(
        c,
        y,
        vec!["c_prev".into(), "c_prev2".into()],
        vec!["y_increment".into()],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_seeded_disjoint_and_exhaustive() {
        let ds = gen_heteroscedastic(200, 1).unwrap();
        let a = split_standardize(ds.clone(), DEFAULT_RATIOS, 9).unwrap();
        let b = split_standardize(ds.clone(), DEFAULT_RATIOS, 9).unwrap();
        assert_eq!(a.split, b.split);
        let s = a.split.as_ref().unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (162, 18, 20));
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .cloned()
            .collect();
        all.sort();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        let c = split_standardize(ds, DEFAULT_RATIOS, 10).unwrap();
        assert_ne!(a.split, c.split);
    }

    #[test]
    fn standardization_uses_training_rows_only() {
        let ds = gen_heteroscedastic(500, 2).unwrap();
        let raw = ds.clone();
        let st = split_standardize(ds, DEFAULT_RATIOS, 3).unwrap();
        let train = st.indices(Part::Train).unwrap().to_vec();
        let (c, y) = st.subset(&train);
        for m in [&c, &y] {
            let (mean, std) = column_stats(m, &(0..m.rows()).collect::<Vec<_>>());
            assert!(mean[0].abs() < 1e-10 && (std[0] - 1.0).abs() < 1e-10);
        }
        let stats = st.stats.as_ref().unwrap();
        let test = st.indices(Part::Test).unwrap().to_vec();
        let leaked = Standardization::fit(&raw.features, &raw.targets, &test).unwrap();
        assert_ne!(leaked.target_mean, stats.target_mean);
        for r in 0..raw.len() {
            let back = stats.destandardize_targets(st.targets.row(r)).unwrap();
            assert!((back[0] - raw.targets[(r, 0)]).abs() < 1e-12);
            let back = stats.destandardize_features(st.features.row(r)).unwrap();
            assert!((back[0] - raw.features[(r, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn split_errors() {
        let ds = gen_bimodal(10, 1).unwrap();
        assert!(split_standardize(ds.clone(), [0.5, 0.5, 0.5], 1).is_err());
        assert!(split_standardize(ds.clone(), [0.85, 0.05, 0.1], 1).is_err());
        assert!(split_standardize(ds, [0.8, 0.0, 0.2], 1).is_ok());
    }

    #[test]
    fn constant_column_std_is_floored() {
        let c = Matrix::from_vec(4, 1, vec![2.0; 4]).unwrap();
        let y = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = Standardization::fit(&c, &y, &[0, 1, 2, 3]).unwrap();
        assert_eq!(s.feature_std[0], 1e-12);
    }

    #[test]
    fn heteroscedastic_formula() {
        assert_eq!(heteroscedastic_std(0.0), 0.1);
        assert!((heteroscedastic_mean(0.25) - 1.0).abs() < 1e-15);
        let ds = gen_heteroscedastic(100, 5).unwrap();
        assert_eq!(ds, gen_heteroscedastic(100, 5).unwrap());
        assert!(ds
            .features
            .as_slice()
            .iter()
            .all(|c| (-1.0..1.0).contains(c)));
    }

    #[test]
    fn dynamics_increments_telescope() {
        let trajs = logistic_trajectories(3, 20, 4, 0.0);
        let again = logistic_trajectories(3, 20, 4, 0.0);
        assert_eq!(trajs, again);
        for u in &trajs {
            assert!(u.iter().all(|v| (0.0..=1.0).contains(v)));
            for s in 1..u.len() {
                assert_eq!(u[s], LOGISTIC_R * u[s - 1] * (1.0 - u[s - 1]));
            }
        }
        let ds = gen_dynamics(3, 20, 4).unwrap();
        let trajs = logistic_trajectories(3, 20, 4, DYNAMICS_NOISE);
        // Rebuild trajectory 1 from its first two states and increments.
        let per = 19;
        let mut u = vec![ds.features[(per, 1)], ds.features[(per, 0)]];
        for r in per..2 * per {
            let next = u[u.len() - 1] + ds.targets[(r, 0)];
            u.push(next);
        }
        for (a, b) in u.iter().zip(&trajs[1]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
