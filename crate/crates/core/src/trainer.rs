//! Training objectives and the fitting loop.
//!
//! Each item of a batch draws `t ~ U{1..T}` and `eps ~ N(0, I)`, perturbs
//! its response to `x_t` and scores the network's prediction of `eps`.
//! Randomness is drawn up front into [`TrainItem`]s so that the loss and its
//! gradient are a deterministic function of the weights.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Part};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::net::{Activation, Adam, Denoiser, HeadFamily, Mlp, ModelCheckpoint, NetConfig};
use crate::schedule::NoiseSchedule;
use crate::scoring::{self, ScoreConfig, ScoreRule};
use crate::seeded_rng;

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;
const PRIOR_INIT_STREAM: u64 = 3;
const PRIOR_TRAIN_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    /// `|eps_hat - eps|^2` for the point head.
    Mse,
    /// A scoring rule; `energy` selects the sample-based estimator.
    Score(ScoreConfig),
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Mse => "mse",
            LossSpec::Score(s) => s.rule.name(),
        }
    }
}

/// The loss a head family trains with when none is given.
pub fn default_loss(head: HeadFamily) -> LossSpec {
    match head {
        HeadFamily::Point => LossSpec::Mse,
        HeadFamily::Diag | HeadFamily::Mixture => {
            LossSpec::Score(ScoreConfig::new(ScoreRule::Crps))
        }
        HeadFamily::LowRank | HeadFamily::Cholesky => {
            LossSpec::Score(ScoreConfig::new(ScoreRule::GaussianKernel))
        }
        HeadFamily::EsSample => LossSpec::Score(ScoreConfig::new(ScoreRule::Energy)),
    }
}

/// Rejects head/loss pairs without a training path, naming an alternative.
pub fn check_compatible(head: HeadFamily, loss: &LossSpec) -> Result<()> {
    use HeadFamily::*;
    use ScoreRule::*;
    let rule = match loss {
        LossSpec::Mse => {
            return if head == Point {
                Ok(())
            } else {
                Err(Error::IncompatibleLoss {
                    family: head.name(),
                    rule: "mse",
                    hint: "mse trains the point head; distributional heads need a scoring rule",
                })
            };
        }
        LossSpec::Score(s) => {
            s.validate()?;
            s.rule
        }
    };
    let hint = match (head, rule) {
        (Diag, Crps | GaussianKernel | Log) | (Mixture, Crps | Log) | (LowRank | Cholesky, GaussianKernel) => {
            return Ok(());
        }
        (EsSample, Energy) => return Ok(()),
        (LowRank | Cholesky, Energy) => {
            "the energy score has no closed form for multivariate Gaussian heads; use score.rule = gaussian-kernel"
        }
        (LowRank | Cholesky, _) => "multivariate heads train with score.rule = gaussian-kernel",
        (Diag | Mixture, Energy) => "the energy score needs samples; use head.family = es-sample or score.rule = crps",
        (Mixture, GaussianKernel) => "mixture heads train with score.rule = crps or log",
        (Point, _) => "the point head trains with mse",
        (EsSample, _) => "the es-sample head trains with score.rule = energy",
    };
    Err(Error::IncompatibleLoss {
        family: head.name(),
        rule: rule.name(),
        hint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping; `None` never
    /// stops early.
    pub patience: Option<usize>,
    pub plateau_factor: f64,
    /// Epochs without improvement before the learning rate is multiplied
    /// by `plateau_factor`; `None` keeps it fixed.
    pub plateau_patience: Option<usize>,
    pub loss: LossSpec,
    /// Train around a pretrained mean regressor.
    pub card: bool,
    pub seed: u64,
    /// Hidden widths of the mean regressor used in CARD mode.
    pub prior_hidden: Vec<usize>,
}

impl TrainConfig {
    pub fn new(loss: LossSpec) -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 64,
            lr: 1e-3,
            patience: Some(100),
            plateau_factor: 0.5,
            plateau_patience: Some(40),
            loss,
            card: false,
            seed: 0,
            prior_hidden: vec![64, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.patience == Some(0) || self.plateau_patience == Some(0) {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::invalid("plateau factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One training example with all of its randomness drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub c: Vec<f64>,
    pub x_t: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
    /// `M x d` auxiliary noise for the es-sample head.
    pub aux: Option<Matrix>,
}

/// Draws `t`, `eps` (and auxiliary noise) for every `(c, y)` row and builds
/// `x_t`, around `prior(c)` when given.
pub fn draw_items<R: rand::Rng + ?Sized>(
    net: &Denoiser,
    sched: &NoiseSchedule,
    loss: &LossSpec,
    c: &Matrix,
    y: &Matrix,
    prior: Option<&Mlp>,
    rng: &mut R,
) -> Result<Vec<TrainItem>> {
    check_dim(c.rows(), y.rows())?;
    let d = net.config().data_dim;
    check_dim(d, y.cols())?;
    let f = match prior {
        Some(p) => Some(p.forward(c)?),
        None => None,
    };
    let aux_rows = match (net.config().head, loss) {
        (HeadFamily::EsSample, LossSpec::Score(s)) => Some(s.samples),
        _ => None,
    };
    let mut items = Vec::with_capacity(y.rows());
    for i in 0..y.rows() {
        let t = rng.random_range(1..=sched.steps());
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let x_t = match &f {
            Some(f) => sched.forward_perturb_card(y.row(i), f.row(i), t, &eps)?,
            None => sched.forward_perturb(y.row(i), t, &eps)?,
        };
        let aux = aux_rows.map(|m| {
            let mut a = Matrix::zeros(m, d);
            for v in a.as_mut_slice() {
                *v = rng.sample(StandardNormal);
            }
            a
        });
        items.push(TrainItem {
            c: c.row(i).to_vec(),
            x_t,
            t,
            eps,
            aux,
        });
    }
    Ok(items)
}

/// Mean loss over `items` and its gradient with respect to the weights.
pub fn loss_and_grad(
    net: &Denoiser,
    items: &[TrainItem],
    loss: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    let (l, g) = loss_impl(net, items, loss, true)?;
    Ok((l, g.expect("gradient requested")))
}

/// Mean loss over `items`.
pub fn loss_only(net: &Denoiser, items: &[TrainItem], loss: &LossSpec) -> Result<f64> {
    Ok(loss_impl(net, items, loss, false)?.0)
}

fn loss_impl(
    net: &Denoiser,
    items: &[TrainItem],
    loss: &LossSpec,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = net.config();
    check_compatible(cfg.head, loss)?;
    let rows_per: Vec<usize> = items
        .iter()
        .map(|it| it.aux.as_ref().map_or(1, |a| a.rows()))
        .collect();
    let total_rows: usize = rows_per.iter().sum();
    let mut input = Matrix::zeros(total_rows, cfg.input_dim());
    let mut r = 0;
    for (it, &n) in items.iter().zip(&rows_per) {
        for j in 0..n {
            let aux = it.aux.as_ref().map(|a| a.row(j));
            net.write_input(&it.x_t, &it.c, it.t, aux, input.row_mut(r))?;
            r += 1;
        }
    }
    let (out, cache) = net.mlp().forward_cached(&input)?;
    let mut grad_out = Matrix::zeros(out.rows(), out.cols());
    let scale = 1.0 / items.len() as f64;
    let mut total = 0.0;
    let mut r = 0;
    for (it, &n) in items.iter().zip(&rows_per) {
        match loss {
            LossSpec::Mse => {
                let raw = out.row(r);
                for (i, (p, e)) in raw.iter().zip(&it.eps).enumerate() {
                    total += (p - e) * (p - e);
                    grad_out[(r, i)] = 2.0 * (p - e) * scale;
                }
            }
            LossSpec::Score(s) if s.rule == ScoreRule::Energy => {
                let mut samples = Matrix::zeros(n, cfg.data_dim);
                for j in 0..n {
                    samples.row_mut(j).copy_from_slice(out.row(r + j));
                }
                let (v, g) = scoring::energy_score_samples_grad(&samples, &it.eps, s.beta_exp)?;
                total += v;
                for j in 0..n {
                    for (o, gi) in grad_out.row_mut(r + j).iter_mut().zip(g.row(j)) {
                        *o = gi * scale;
                    }
                }
            }
            LossSpec::Score(s) => {
                let raw = out.row(r);
                let dist = net.head_dist(raw)?;
                let (v, g) = scoring::score_with_grad(&dist, &it.eps, s)?;
                total += v;
                if want_grad {
                    let graw = net.head_backward(raw, &g)?;
                    for (o, gi) in grad_out.row_mut(r).iter_mut().zip(&graw) {
                        *o = gi * scale;
                    }
                }
            }
        }
        r += n;
    }
    let mean = total * scale;
    if !mean.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grads = if want_grad {
        Some(net.mlp().backward(&cache, &grad_out)?)
    } else {
        None
    };
    Ok((mean, grads))
}

/// One optimisation step on a batch. Returns the batch loss; a non-finite
/// gradient skips the update and is reported as `Err(NonFiniteGradient)`.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: rand::Rng + ?Sized>(
    net: &mut Denoiser,
    adam: &mut Adam,
    sched: &NoiseSchedule,
    loss: &LossSpec,
    c: &Matrix,
    y: &Matrix,
    prior: Option<&Mlp>,
    rng: &mut R,
) -> Result<f64> {
    let items = draw_items(net, sched, loss, c, y, prior, rng)?;
    let (l, g) = loss_and_grad(net, &items, loss)?;
    adam.step(net.weights_mut(), &g)?;
    Ok(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Seconds since the start of training, when a clock was supplied.
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrEvent {
    pub epoch: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub head: String,
    pub loss: String,
    pub epochs: Vec<EpochRecord>,
    pub lr_events: Vec<LrEvent>,
    pub nonfinite_steps: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// `abar_T`, how close the forward process gets to pure noise.
    pub alpha_bar_final: f64,
    /// Epochs spent pretraining the CARD mean regressor.
    pub prior_epochs: Option<usize>,
    pub split_seed: Option<u64>,
}

fn batches(rows: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    rows.chunks(size)
}

/// Pretrains the CARD mean regressor `f(c)` with squared error.
pub fn fit_prior(
    c: &Matrix,
    y: &Matrix,
    hidden: &[usize],
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Mlp> {
    check_dim(c.rows(), y.rows())?;
    if c.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut mlp = Mlp::new(
        c.cols(),
        hidden,
        y.cols(),
        Activation::Silu,
        &mut seeded_rng(seed, PRIOR_INIT_STREAM),
    );
    let mut adam = Adam::new(mlp.num_weights(), lr);
    let mut rng = seeded_rng(seed, PRIOR_TRAIN_STREAM);
    let mut order: Vec<usize> = (0..c.rows()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for idx in batches(&order, batch) {
            let (bc, by) = gather(c, y, idx);
            let (out, cache) = mlp.forward_cached(&bc)?;
            let mut g = Matrix::zeros(out.rows(), out.cols());
            let scale = 2.0 / idx.len() as f64;
            for (gv, (o, t)) in g
                .as_mut_slice()
                .iter_mut()
                .zip(out.as_slice().iter().zip(by.as_slice()))
            {
                *gv = scale * (o - t);
            }
            let grads = mlp.backward(&cache, &g)?;
            match adam.step(mlp.weights_mut(), &grads) {
                Ok(()) | Err(Error::NonFiniteGradient) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(mlp)
}

fn gather(c: &Matrix, y: &Matrix, idx: &[usize]) -> (Matrix, Matrix) {
    let mut bc = Matrix::zeros(idx.len(), c.cols());
    let mut by = Matrix::zeros(idx.len(), y.cols());
    for (i, &r) in idx.iter().enumerate() {
        bc.row_mut(i).copy_from_slice(c.row(r));
        by.row_mut(i).copy_from_slice(y.row(r));
    }
    (bc, by)
}

/// Trains a fresh network on the training part of a split, standardized
/// dataset and returns the best-validation checkpoint.
///
/// `clock`, if given, returns seconds since some fixed origin and is used
/// for the wall-time column of the report.
pub fn fit(
    net_config: NetConfig,
    sched: &NoiseSchedule,
    ds: &Dataset,
    cfg: &TrainConfig,
    clock: Option<&dyn Fn() -> f64>,
) -> Result<(ModelCheckpoint, TrainingReport)> {
    cfg.validate()?;
    check_compatible(net_config.head, &cfg.loss)?;
    check_dim(ds.cond_dim(), net_config.cond_dim)?;
    check_dim(ds.data_dim(), net_config.data_dim)?;
    if net_config.steps != sched.steps() {
        return Err(Error::invalid(
            "network and schedule disagree on the number of steps",
        ));
    }
    let stats = ds
        .stats
        .clone()
        .ok_or_else(|| Error::invalid("dataset must be split and standardized first"))?;
    let (train_c, train_y) = ds.part(Part::Train)?;
    if train_y.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let (val_c, val_y) = ds.part(Part::Val)?;
    let start = clock.map(|c| c());

    let mut prior_epochs = None;
    let prior = if cfg.card {
        let e = (cfg.epochs / 10).max(1);
        prior_epochs = Some(e);
        Some(fit_prior(
            &train_c,
            &train_y,
            &cfg.prior_hidden,
            e,
            cfg.batch_size,
            cfg.lr,
            cfg.seed,
        )?)
    } else {
        None
    };

    let mut net = Denoiser::new(net_config, &mut seeded_rng(cfg.seed, INIT_STREAM))?;
    let mut adam = Adam::new(net.weights().len(), cfg.lr);
    let mut rng = seeded_rng(cfg.seed, TRAIN_STREAM);
    let mut order: Vec<usize> = (0..train_y.rows()).collect();

    let mut report = TrainingReport {
        head: crate::net::describe(net.config()),
        loss: String::from(cfg.loss.name()),
        epochs: Vec::new(),
        lr_events: Vec::new(),
        nonfinite_steps: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        alpha_bar_final: sched.alpha_bar(sched.steps()),
        prior_epochs,
        split_seed: ds.split.as_ref().map(|s| s.seed),
    };
    let mut best_weights = net.weights().to_vec();
    let (mut since_best, mut since_lr_change) = (0usize, 0usize);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in batches(&order, cfg.batch_size) {
            let (bc, by) = gather(&train_c, &train_y, idx);
            let items = draw_items(&net, sched, &cfg.loss, &bc, &by, prior.as_ref(), &mut rng)?;
            let (l, g) = match loss_and_grad(&net, &items, &cfg.loss) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => {
                    report.nonfinite_steps += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            match adam.step(net.weights_mut(), &g) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient) => report.nonfinite_steps += 1,
                Err(e) => return Err(e),
            }
            sum += l * idx.len() as f64;
            count += idx.len();
        }
        let train_loss = if count > 0 {
            sum / count as f64
        } else {
            f64::NAN
        };
        let val_loss = if val_y.rows() > 0 {
            let mut vrng = seeded_rng(cfg.seed, VAL_STREAM);
            let items = draw_items(
                &net,
                sched,
                &cfg.loss,
                &val_c,
                &val_y,
                prior.as_ref(),
                &mut vrng,
            )?;
            loss_only(&net, &items, &cfg.loss).unwrap_or(f64::INFINITY)
        } else {
            train_loss
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: adam.lr,
            wall_time: match (clock, start) {
                (Some(c), Some(s)) => Some(c() - s),
                _ => None,
            },
        });
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best_weights.copy_from_slice(net.weights());
            since_best = 0;
            since_lr_change = 0;
        } else {
            since_best += 1;
            since_lr_change += 1;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            report.stopped_early = epoch < cfg.epochs;
            break;
        }
        if cfg.plateau_patience.is_some_and(|p| since_lr_change >= p) {
            adam.lr *= cfg.plateau_factor;
            report.lr_events.push(LrEvent { epoch, lr: adam.lr });
            since_lr_change = 0;
        }
    }
    net.weights_mut().copy_from_slice(&best_weights);
    let ckpt = ModelCheckpoint::new(net, sched.clone(), stats, prior);
    Ok((ckpt, report))
}
