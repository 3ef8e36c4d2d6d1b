//! Distributional diffusion models for probabilistic regression.
//!
//! The denoiser does not regress a point estimate of the forward-process
//! noise. It predicts a full distribution over it (diagonal Gaussian,
//! diagonal Gaussian mixture, or a multivariate Gaussian with low-rank or
//! Cholesky covariance) and is trained with strictly proper scoring rules.
//! Because every family is a Gaussian mixture, the reverse transition is
//! again a Gaussian mixture in closed form, see [`sampler::reverse_step`].
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! anything touching the clock or filesystem live in the `distdiff` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod linalg;
pub(crate) mod math;

pub mod data;
pub mod metrics;
pub mod net;
pub mod noisedist;
pub mod sampler;
pub mod schedule;
pub mod scoring;
pub mod trainer;

pub use data::Dataset;
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use net::{Activation, Adam, Denoiser, HeadFamily, ModelCheckpoint, NetConfig};
pub use noisedist::{CholeskyGaussian, DiagGaussian, LowRankGaussian, Mixture, NoiseDist};
pub use sampler::SamplerConfig;
pub use schedule::{NoiseSchedule, ReverseCoeffs};
pub use scoring::{ScoreConfig, ScoreRule};
pub use trainer::{LossSpec, TrainConfig, TrainingReport};

/// Seeded RNG used everywhere a stream has to be reproducible.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the RNG for `seed`, on stream `stream`.
///
/// Ensemble members and other independent workers take distinct streams of
/// the same master seed, so their draws never depend on scheduling order.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
