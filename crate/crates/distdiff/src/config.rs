//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Every key has a default (see [`KEYS`]); unknown keys are
//! rejected. The effective configuration is written back in the same
//! format, so an output directory's `config.txt` reruns the command.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use distdiff_core::sampler::EuWeighting;
use distdiff_core::trainer::{check_compatible, default_loss};
use distdiff_core::{
    Activation, HeadFamily, LossSpec, NetConfig, NoiseSchedule, SamplerConfig, ScoreConfig, ScoreRule, TrainConfig,
};

/// `(key, default, description)` for every recognised key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data.path", "", "delimited input file; empty selects data.generator"),
    ("data.generator", "heteroscedastic", "heteroscedastic | bimodal | dynamics"),
    ("data.n", "2000", "rows to generate (trajectories for dynamics)"),
    ("data.range", "-1,1", "condition interval of the heteroscedastic generator"),
    ("data.steps", "50", "trajectory length of the dynamics generator"),
    ("data.targets", "", "comma-separated target columns; empty uses the y_/c_ prefixes"),
    ("data.seed", "0", "generator and split seed"),
    ("data.split", "0.81,0.09,0.10", "train,val,test fractions"),
    ("schedule.beta1", "0.001", "first beta of the linear schedule"),
    ("schedule.betaT", "0.35", "last beta of the linear schedule"),
    ("schedule.T", "50", "diffusion steps"),
    ("schedule.eta", "1", "0 = deterministic (DDIM), 1 = stochastic (DDPM)"),
    ("head.family", "diag", "point | diag | mixture | lowrank | cholesky | es-sample"),
    ("head.K", "3", "mixture components"),
    ("head.rank", "1", "low-rank factor rank"),
    ("net.hidden", "128,128", "hidden layer widths"),
    ("net.activation", "silu", "silu | relu | tanh"),
    ("net.embed", "32", "timestep embedding width"),
    ("score.rule", "auto", "auto | crps | energy | gaussian-kernel | log; auto picks the head's default"),
    ("score.gamma", "10", "Gaussian kernel bandwidth"),
    ("score.beta", "1", "energy score exponent, in (0, 2)"),
    ("score.samples", "3", "samples per target for the energy score"),
    ("train.epochs", "1000", "maximum epochs"),
    ("train.batch", "64", "minibatch size"),
    ("train.lr", "0.001", "Adam learning rate"),
    ("train.patience", "100", "early-stopping patience in epochs; 0 disables"),
    ("train.plateau_patience", "40", "epochs without improvement before the learning rate is cut; 0 disables"),
    ("train.plateau_factor", "0.5", "learning-rate cut factor"),
    ("train.seed", "0", "initialisation and minibatch seed"),
    ("sample.n", "100", "samples per case"),
    ("sample.tau", "1", "reverse covariance scale, in (0, 1]"),
    ("sample.seed", "0", "sampling seed"),
    ("sample.inputs", "", "delimited file of raw conditions, one case per row"),
    ("sample.rollout_steps", "0", "autoregressive steps; 0 samples each input row once"),
    ("sample.eu_weighting", "unweighted", "unweighted | exact"),
    ("card.enabled", "false", "train and sample around a fitted mean regressor"),
    ("model.checkpoint", "", "comma-separated checkpoint files"),
    ("eval.split", "test", "train | val | test"),
    ("calibrate.split", "val", "train | val | test"),
    ("calibrate.grid", "0.01,0.02,0.05,0.1,0.2,0.5,1.0", "tau values to sweep"),
    ("output.dir", "", "output directory; --out takes precedence"),
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {err}")]
    Read { path: PathBuf, err: std::io::Error },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: expected `key = value`, got `{line}`")]
    Syntax { origin: String, line: String },
    #[error("{origin}: key `{key}` given twice")]
    Duplicate { origin: String, key: String },
    #[error("key `{key}`: cannot parse `{value}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect() }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = format!("{origin}:{}", i + 1);
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { origin: at.clone(), line: line.into() })?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(ConfigError::Duplicate { origin: at, key: k.into() });
            }
            seen.push(k);
            cfg.set_from(k, v.trim(), &at)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Read { path: path.into(), err })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { origin: "--set".into(), line: kv.into() })?;
        self.set_from(k.trim(), v.trim(), "--set")
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        self.set_from(key, &value.into(), "set")
    }

    fn set_from(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey { origin: origin.into(), key: key.into() }),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        debug_assert!(default_of(key).is_some(), "unregistered key {key}");
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let v = self.get(key);
        v.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), value: v.into(), reason: e.to_string() })
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.trim().parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.into(),
                    value: v.into(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    fn invalid(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Value { key: key.into(), value: self.get(key).into(), reason: reason.into() }
    }

    /// Optional count where `0` means "off".
    fn optional_count(&self, key: &str) -> Result<Option<usize>> {
        let v: usize = self.parse_value(key)?;
        Ok((v > 0).then_some(v))
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(
            self.parse_value("schedule.beta1")?,
            self.parse_value("schedule.betaT")?,
            self.parse_value("schedule.T")?,
            self.parse_value("schedule.eta")?,
        )
        .map_err(|e| ConfigError::Invalid(format!("schedule: {e}")))
    }

    pub fn head(&self) -> Result<HeadFamily> {
        self.parse_value("head.family")
    }

    pub fn split_ratios(&self) -> Result<[f64; 3]> {
        let v: Vec<f64> = self.list("data.split")?;
        v.try_into().map_err(|_| self.invalid("data.split", "need three fractions"))
    }

    pub fn net_config(&self, data_dim: usize, cond_dim: usize) -> Result<NetConfig> {
        let mut net = NetConfig::new(data_dim, cond_dim, self.head()?, self.parse_value("schedule.T")?);
        net.hidden = self.list("net.hidden")?;
        net.activation = self.parse_value::<Activation>("net.activation")?;
        net.embed_dim = self.parse_value("net.embed")?;
        net.components = self.parse_value("head.K")?;
        net.rank = self.parse_value("head.rank")?;
        net.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(net)
    }

    pub fn loss(&self) -> Result<LossSpec> {
        let head = self.head()?;
        let rule = self.get("score.rule");
        let base = if rule == "auto" {
            default_loss(head)
        } else {
            LossSpec::Score(ScoreConfig::new(self.parse_value::<ScoreRule>("score.rule")?))
        };
        Ok(match base {
            LossSpec::Mse => LossSpec::Mse,
            LossSpec::Score(mut s) => {
                s.gamma = self.parse_value("score.gamma")?;
                s.beta_exp = self.parse_value("score.beta")?;
                s.samples = self.parse_value("score.samples")?;
                LossSpec::Score(s)
            }
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.loss()?);
        cfg = TrainConfig {
            epochs: self.parse_value("train.epochs")?,
            batch_size: self.parse_value("train.batch")?,
            lr: self.parse_value("train.lr")?,
            patience: self.optional_count("train.patience")?,
            plateau_factor: self.parse_value("train.plateau_factor")?,
            plateau_patience: self.optional_count("train.plateau_patience")?,
            card: self.parse_value("card.enabled")?,
            seed: self.parse_value("train.seed")?,
            ..cfg
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        check_compatible(self.head()?, &cfg.loss).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let eu = match self.get("sample.eu_weighting") {
            "unweighted" => EuWeighting::Unweighted,
            "exact" => EuWeighting::Exact,
            _ => return Err(self.invalid("sample.eu_weighting", "expected unweighted or exact")),
        };
        let cfg = SamplerConfig {
            eta: self.parse_value("schedule.eta")?,
            tau: self.parse_value("sample.tau")?,
            n_samples: self.parse_value("sample.n")?,
            seed: self.parse_value("sample.seed")?,
            eu_weighting: eu,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn checkpoints(&self) -> Vec<PathBuf> {
        self.get("model.checkpoint").split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
    }

    /// Renders every key in `key = value` form, grouped by section.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (k, _, doc) in KEYS {
            let s = k.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            out.push_str(&format!("# {doc}\n{k} = {}\n", self.get(k)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_key() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.values.len(), KEYS.len());
        assert_eq!(cfg.head().unwrap(), HeadFamily::Diag);
        assert_eq!(cfg.split_ratios().unwrap(), [0.81, 0.09, 0.10]);
        let t = cfg.train_config().unwrap();
        assert_eq!((t.epochs, t.batch_size, t.lr, t.patience), (1000, 64, 1e-3, Some(100)));
        assert_eq!(cfg.sampler_config().unwrap(), SamplerConfig::default());
        let grid: Vec<f64> = cfg.list("calibrate.grid").unwrap();
        assert_eq!(grid, vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]);
    }

    #[test]
    fn parse_and_override() {
        let mut cfg = RunConfig::parse("# comment\n\nhead.family = mixture\nhead.K=2\n", "f").unwrap();
        assert_eq!(cfg.get("head.family"), "mixture");
        cfg.apply_override("head.K = 5").unwrap();
        assert_eq!(cfg.net_config(1, 1).unwrap().components, 5);
        assert!(matches!(RunConfig::parse("head.size = 3\n", "f"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(RunConfig::parse("head.K\n", "f"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(RunConfig::parse("head.K = 1\nhead.K = 2\n", "f"), Err(ConfigError::Duplicate { .. })));
        assert!(matches!(cfg.apply_override("nope=1"), Err(ConfigError::UnknownKey { .. })));
        cfg.apply_override("train.epochs=ten").unwrap();
        assert!(matches!(cfg.train_config(), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("score.rule", "log").unwrap();
        cfg.set("data.path", "/tmp/x y.csv").unwrap();
        assert_eq!(RunConfig::parse(&cfg.render(), "echo").unwrap(), cfg);
    }

    #[test]
    fn loss_resolution() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.loss().unwrap(), LossSpec::Score(s) if s.rule == ScoreRule::Crps));
        cfg.set("head.family", "point").unwrap();
        assert_eq!(cfg.loss().unwrap(), LossSpec::Mse);
        cfg.set("head.family", "lowrank").unwrap();
        cfg.set("score.rule", "energy").unwrap();
        let e = cfg.train_config().unwrap_err().to_string();
        assert!(e.contains("gaussian-kernel"), "{e}");
        cfg.set("train.patience", "0").unwrap();
        cfg.set("score.rule", "auto").unwrap();
        assert_eq!(cfg.train_config().unwrap().patience, None);
    }
}
