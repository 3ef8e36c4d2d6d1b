use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("diffusion step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },

    #[error(
        "degenerate reverse coefficients at step {t}: 1 - abar_(t-1) - sigma_t^2 = {radicand}"
    )]
    DegenerateCoefficients { t: usize, radicand: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("{family} head cannot be trained with the {rule} loss; {hint}")]
    IncompatibleLoss {
        family: &'static str,
        rule: &'static str,
        hint: &'static str,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("point heads carry no noise distribution, so no epistemic estimate exists")]
    NoEpistemicEstimate,

    #[error("non-finite gradient, optimizer step skipped")]
    NonFiniteGradient,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
