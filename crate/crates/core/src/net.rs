//! The noise-predictor backbone: an MLP over `[x_t, c, embed(t)]` with a
//! family-specific output head, hand-written backprop and Adam.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::math::{all_finite, cos, exp, ln, sigmoid, sin, softplus_inv, sqrt};
use crate::noisedist::{
    self, cholesky_backward, softmax_backward, softplus_backward, NoiseDist, VARIANCE_FLOOR,
};
use crate::schedule::NoiseSchedule;
use crate::scoring::DistGrad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Silu,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative at pre-activation `x`, given `y = apply(x)`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadFamily {
    /// Point prediction of the noise (the MSE-trained baseline).
    Point,
    Diag,
    Mixture,
    LowRank,
    Cholesky,
    /// Generative head: the input carries an extra noise channel and the
    /// output is one sample of the noise.
    EsSample,
}

impl HeadFamily {
    pub fn name(self) -> &'static str {
        match self {
            HeadFamily::Point => "point",
            HeadFamily::Diag => "diag",
            HeadFamily::Mixture => "mixture",
            HeadFamily::LowRank => "lowrank",
            HeadFamily::Cholesky => "cholesky",
            HeadFamily::EsSample => "es-sample",
        }
    }

    /// Whether the head outputs a parametric noise distribution.
    pub fn is_distributional(self) -> bool {
        !matches!(self, HeadFamily::Point | HeadFamily::EsSample)
    }
}

impl fmt::Display for HeadFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(HeadFamily::Point),
            "diag" => Ok(HeadFamily::Diag),
            "mixture" => Ok(HeadFamily::Mixture),
            "lowrank" => Ok(HeadFamily::LowRank),
            "cholesky" => Ok(HeadFamily::Cholesky),
            "es-sample" => Ok(HeadFamily::EsSample),
            other => Err(Error::invalid(format!(
                "unknown head family `{other}` (expected point, diag, mixture, lowrank, cholesky or es-sample)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Response dimension `d`.
    pub data_dim: usize,
    /// Condition dimension `d_c`.
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub head: HeadFamily,
    /// Mixture components `K`.
    pub components: usize,
    /// Low-rank factor rank `r`.
    pub rank: usize,
    pub embed_dim: usize,
    /// Number of diffusion steps `T`, used to embed `t / T`.
    pub steps: usize,
}

impl NetConfig {
    pub fn new(data_dim: usize, cond_dim: usize, head: HeadFamily, steps: usize) -> Self {
        NetConfig {
            data_dim,
            cond_dim,
            hidden: vec![128, 128],
            activation: Activation::Silu,
            head,
            components: 3,
            rank: 1,
            embed_dim: 32,
            steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(Error::invalid("response dimension must be positive"));
        }
        if self.hidden.iter().any(|w| *w == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(Error::invalid(
                "embedding dimension must be even and at least 2",
            ));
        }
        if self.steps == 0 {
            return Err(Error::invalid("number of diffusion steps must be positive"));
        }
        if self.head == HeadFamily::Mixture && self.components == 0 {
            return Err(Error::invalid("mixture head needs at least one component"));
        }
        if self.head == HeadFamily::LowRank && self.rank == 0 {
            return Err(Error::invalid("low-rank head needs rank at least 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        let aux = if self.head == HeadFamily::EsSample {
            self.data_dim
        } else {
            0
        };
        self.data_dim + self.cond_dim + self.embed_dim + aux
    }

    pub fn output_dim(&self) -> usize {
        let d = self.data_dim;
        match self.head {
            HeadFamily::Point | HeadFamily::EsSample => d,
            HeadFamily::Diag => 2 * d,
            HeadFamily::Mixture => self.components * (2 * d + 1),
            HeadFamily::LowRank => d + d * self.rank + d,
            HeadFamily::Cholesky => d + d * (d + 1) / 2,
        }
    }

    /// Output indices holding raw variance parameters.
    fn variance_outputs(&self) -> Vec<usize> {
        let d = self.data_dim;
        match self.head {
            HeadFamily::Point | HeadFamily::EsSample => Vec::new(),
            HeadFamily::Diag => (d..2 * d).collect(),
            HeadFamily::Mixture => {
                let k = self.components;
                (k + k * d..k + 2 * k * d).collect()
            }
            HeadFamily::LowRank => (d + d * self.rank..2 * d + d * self.rank).collect(),
            HeadFamily::Cholesky => (0..d).map(|i| d + packed_index(i, i)).collect(),
        }
    }
}

/// Position of `(i, j)`, `j <= i`, in the row-major packed lower triangle.
#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Sinusoidal features of `t / T`: `sin` and `cos` at `dim / 2` frequencies
/// spaced geometrically from 1 to 1000.
pub fn timestep_embed(t: usize, steps: usize, dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    timestep_embed_into(t, steps, &mut out)?;
    Ok(out)
}

fn timestep_embed_into(t: usize, steps: usize, out: &mut [f64]) -> Result<()> {
    if t < 1 || t > steps {
        return Err(Error::StepOutOfRange { t, steps });
    }
    let half = out.len() / 2;
    let s = t as f64 / steps as f64;
    for k in 0..half {
        let freq = if half > 1 {
            exp(ln(1000.0) * k as f64 / (half - 1) as f64)
        } else {
            1.0
        };
        out[k] = sin(freq * s);
        out[half + k] = cos(freq * s);
    }
    Ok(())
}

/// A fully connected network. Weights are one flat vector: for each layer
/// the `out x in` matrix (row-major) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `pre[l]` / `acts[l + 1]` belong to layer `l`.
    acts: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl Mlp {
    /// He-uniform initialisation, zero biases.
    pub fn new<R: rand::Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut mlp = Mlp::zeros(input, hidden, output, activation);
        let mut offset = 0;
        for l in 0..mlp.layers() {
            let (fan_in, fan_out) = (mlp.sizes[l], mlp.sizes[l + 1]);
            let bound = sqrt(6.0 / fan_in as f64);
            for w in &mut mlp.weights[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        mlp
    }

    pub fn zeros(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp {
            sizes,
            activation,
            weights: vec![0.0; n],
        }
    }

    pub fn from_weights(
        sizes: Vec<usize>,
        activation: Activation,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("network needs an input and an output layer"));
        }
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        check_dim(n, weights.len())?;
        Ok(Mlp {
            sizes,
            activation,
            weights,
        })
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layer sizes")
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    /// Bias slice of the output layer.
    fn output_bias_mut(&mut self) -> &mut [f64] {
        let out = self.output_dim();
        let n = self.weights.len();
        &mut self.weights[n - out..]
    }

    /// Forward pass over the rows of `input`.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(input)?.0)
    }

    pub fn forward_cached(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        check_dim(self.input_dim(), input.cols())?;
        let batch = input.rows();
        let mut acts = Vec::with_capacity(self.layers() + 1);
        let mut pre = Vec::with_capacity(self.layers());
        acts.push(input.clone());
        let mut offset = 0;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.weights[offset..offset + n_in * n_out];
            let b = &self.weights[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let a = &acts[l];
            let mut z = Matrix::zeros(batch, n_out);
            for r in 0..batch {
                let x = a.row(r);
                for (o, zo) in z.row_mut(r).iter_mut().enumerate() {
                    *zo = b[o] + crate::math::dot(&w[o * n_in..(o + 1) * n_in], x);
                }
            }
            let last = l + 1 == self.layers();
            let next = if last {
                z.clone()
            } else {
                let mut h = z.clone();
                for v in h.as_mut_slice() {
                    *v = self.activation.apply(*v);
                }
                h
            };
            pre.push(z);
            acts.push(next);
        }
        let out = acts.last().expect("output layer").clone();
        Ok((out, ForwardCache { acts, pre }))
    }

    /// Gradient of a scalar loss with respect to all weights, given its
    /// gradient `grad_out` with respect to the outputs of the cached pass.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<Vec<f64>> {
        let batch = cache.acts[0].rows();
        check_dim(batch, grad_out.rows())?;
        check_dim(self.output_dim(), grad_out.cols())?;
        let mut grads = vec![0.0; self.weights.len()];
        let mut offsets = Vec::with_capacity(self.layers());
        let mut offset = 0;
        for l in 0..self.layers() {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = grad_out.clone();
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            if l + 1 != self.layers() {
                let (z, h) = (&cache.pre[l], &cache.acts[l + 1]);
                for ((g, zv), hv) in delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(z.as_slice())
                    .zip(h.as_slice())
                {
                    *g *= self.activation.derivative(*zv, *hv);
                }
            }
            let a = &cache.acts[l];
            let (gw, rest) = grads[off..].split_at_mut(n_in * n_out);
            let gb = &mut rest[..n_out];
            for r in 0..batch {
                let x = a.row(r);
                for (o, d) in delta.row(r).iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if l > 0 {
                let w = &self.weights[off..off + n_in * n_out];
                let mut prev = Matrix::zeros(batch, n_in);
                for r in 0..batch {
                    let p = prev.row_mut(r);
                    for (o, d) in delta.row(r).iter().enumerate() {
                        if *d == 0.0 {
                            continue;
                        }
                        for (pi, wv) in p.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *pi += d * wv;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }
}

/// The noise predictor `eps_theta(x_t, c, t)` with its output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    config: NetConfig,
    mlp: Mlp,
}

impl Denoiser {
    /// Random initialisation. Variance outputs start with a bias that makes
    /// every initial variance about 1.
    pub fn new<R: rand::Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp::new(
            config.input_dim(),
            &config.hidden,
            config.output_dim(),
            config.activation,
            rng,
        );
        let mut net = Denoiser { config, mlp };
        net.init_variance_bias();
        Ok(net)
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp::zeros(
            config.input_dim(),
            &config.hidden,
            config.output_dim(),
            config.activation,
        );
        Ok(Denoiser { config, mlp })
    }

    pub fn from_weights(config: NetConfig, weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![config.input_dim()];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(config.output_dim());
        let mlp = Mlp::from_weights(sizes, config.activation, weights)?;
        Ok(Denoiser { config, mlp })
    }

    fn init_variance_bias(&mut self) {
        let raw = softplus_inv(1.0 - VARIANCE_FLOOR);
        let idx = self.config.variance_outputs();
        let bias = self.mlp.output_bias_mut();
        for i in idx {
            bias[i] = raw;
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn weights(&self) -> &[f64] {
        self.mlp.weights()
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.mlp.weights_mut()
    }

    /// Writes the network input `[x_t, c, embed(t), aux]` into `row`.
    pub fn write_input(
        &self,
        x_t: &[f64],
        c: &[f64],
        t: usize,
        aux: Option<&[f64]>,
        row: &mut [f64],
    ) -> Result<()> {
        let cfg = &self.config;
        check_dim(cfg.data_dim, x_t.len())?;
        check_dim(cfg.cond_dim, c.len())?;
        check_dim(cfg.input_dim(), row.len())?;
        let (d, dc, e) = (cfg.data_dim, cfg.cond_dim, cfg.embed_dim);
        row[..d].copy_from_slice(x_t);
        row[d..d + dc].copy_from_slice(c);
        timestep_embed_into(t, cfg.steps, &mut row[d + dc..d + dc + e])?;
        match (cfg.head == HeadFamily::EsSample, aux) {
            (true, Some(a)) => {
                check_dim(d, a.len())?;
                row[d + dc + e..].copy_from_slice(a);
            }
            (false, None) => {}
            (true, None) => {
                return Err(Error::invalid(
                    "es-sample head needs an auxiliary noise input",
                ))
            }
            (false, Some(_)) => {
                return Err(Error::invalid(
                    "only the es-sample head takes auxiliary noise",
                ))
            }
        }
        Ok(())
    }

    /// Raw head outputs for one input.
    pub fn forward(
        &self,
        x_t: &[f64],
        c: &[f64],
        t: usize,
        aux: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let mut input = Matrix::zeros(1, self.config.input_dim());
        self.write_input(x_t, c, t, aux, input.row_mut(0))?;
        Ok(self.mlp.forward(&input)?.into_vec())
    }

    /// Turns raw outputs into the noise distribution of a distributional head.
    pub fn head_dist(&self, raw: &[f64]) -> Result<NoiseDist> {
        let cfg = &self.config;
        check_dim(cfg.output_dim(), raw.len())?;
        let d = cfg.data_dim;
        match cfg.head {
            HeadFamily::Diag => Ok(NoiseDist::Diag(noisedist::transform_diag(
                &raw[..d],
                &raw[d..],
            )?)),
            HeadFamily::Mixture => {
                let k = cfg.components;
                Ok(NoiseDist::Mixture(noisedist::transform_mixture(
                    &raw[..k],
                    &raw[k..k + k * d],
                    &raw[k + k * d..],
                )?))
            }
            HeadFamily::LowRank => {
                let r = cfg.rank;
                Ok(NoiseDist::LowRank(noisedist::transform_lowrank(
                    &raw[..d],
                    &raw[d..d + d * r],
                    &raw[d + d * r..],
                )?))
            }
            HeadFamily::Cholesky => Ok(NoiseDist::Cholesky(noisedist::transform_cholesky(
                &raw[..d],
                &self.unpack_lower(&raw[d..]),
            )?)),
            HeadFamily::Point | HeadFamily::EsSample => Err(Error::invalid(format!(
                "the {} head does not output a distribution",
                cfg.head
            ))),
        }
    }

    fn unpack_lower(&self, packed: &[f64]) -> Matrix {
        let d = self.config.data_dim;
        let mut l = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                l[(i, j)] = packed[packed_index(i, j)];
            }
        }
        l
    }

    /// Chain rule from a gradient on the distribution's parameters back to
    /// the raw outputs `raw` it was built from.
    pub fn head_backward(&self, raw: &[f64], grad: &DistGrad) -> Result<Vec<f64>> {
        let cfg = &self.config;
        check_dim(cfg.output_dim(), raw.len())?;
        let d = cfg.data_dim;
        let mut g = vec![0.0; raw.len()];
        match (cfg.head, grad) {
            (HeadFamily::Diag, DistGrad::Diag { mean, var }) => {
                g[..d].copy_from_slice(mean);
                softplus_backward(&raw[d..], var, &mut g[d..]);
            }
            (
                HeadFamily::Mixture,
                DistGrad::Mixture {
                    weights,
                    means,
                    vars,
                },
            ) => {
                let k = cfg.components;
                let w = noisedist::softmax(&raw[..k]);
                softmax_backward(&w, weights, &mut g[..k]);
                g[k..k + k * d].copy_from_slice(means.as_slice());
                softplus_backward(&raw[k + k * d..], vars.as_slice(), &mut g[k + k * d..]);
            }
            (HeadFamily::LowRank, DistGrad::LowRank { mean, factor, diag }) => {
                let r = cfg.rank;
                g[..d].copy_from_slice(mean);
                g[d..d + d * r].copy_from_slice(factor.as_slice());
                softplus_backward(&raw[d + d * r..], diag, &mut g[d + d * r..]);
            }
            (HeadFamily::Cholesky, DistGrad::Cholesky { mean, chol }) => {
                g[..d].copy_from_slice(mean);
                let gl = cholesky_backward(&self.unpack_lower(&raw[d..]), chol);
                for i in 0..d {
                    for j in 0..=i {
                        g[d + packed_index(i, j)] = gl[(i, j)];
                    }
                }
            }
            (head, _) => {
                return Err(Error::invalid(format!(
                    "gradient layout does not match the {head} head"
                )));
            }
        }
        Ok(g)
    }
}

/// Adam with bias correction. Steps whose gradient is not finite are
/// skipped and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
    skipped: u64,
}

impl Adam {
    pub fn new(num_weights: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_weights],
            v: vec![0.0; num_weights],
            steps: 0,
            skipped: 0,
        }
    }

    /// Applies one update. Returns `Err(NonFiniteGradient)` without touching
    /// `weights` if any gradient entry is NaN or infinite.
    pub fn step(&mut self, weights: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim(self.m.len(), weights.len())?;
        check_dim(self.m.len(), grads.len())?;
        if !all_finite(grads) {
            self.skipped += 1;
            return Err(Error::NonFiniteGradient);
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for i in 0..weights.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            weights[i] -= self.lr * m_hat / (sqrt(v_hat) + self.eps);
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to sample from a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub net: Denoiser,
    pub schedule: NoiseSchedule,
    pub standardization: Standardization,
    /// Mean regressor `f(c)` in standardized units, present in CARD mode.
    pub prior: Option<Mlp>,
}

impl ModelCheckpoint {
    pub fn new(
        net: Denoiser,
        schedule: NoiseSchedule,
        standardization: Standardization,
        prior: Option<Mlp>,
    ) -> Self {
        ModelCheckpoint {
            format_version: CHECKPOINT_VERSION,
            net,
            schedule,
            standardization,
            prior,
        }
    }

    pub fn head(&self) -> HeadFamily {
        self.net.config().head
    }

    pub fn check_version(&self) -> Result<()> {
        if self.format_version == CHECKPOINT_VERSION {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "unsupported checkpoint format version {} (this build reads version {CHECKPOINT_VERSION})",
                self.format_version
            )))
        }
    }

    /// Prior mean `f(c)` for standardized condition `c`, or zeros.
    pub fn prior_mean(&self, c: &[f64]) -> Result<Vec<f64>> {
        match &self.prior {
            Some(p) => {
                let input = Matrix::from_vec(1, c.len(), c.to_vec())?;
                Ok(p.forward(&input)?.into_vec())
            }
            None => Ok(vec![0.0; self.net.config().data_dim]),
        }
    }
}

/// Short description used in reports, e.g. `mixture(K=3)`.
pub fn describe(config: &NetConfig) -> String {
    match config.head {
        HeadFamily::Mixture => format!("mixture(K={})", config.components),
        HeadFamily::LowRank => format!("lowrank(r={})", config.rank),
        other => String::from(other.name()),
    }
}
