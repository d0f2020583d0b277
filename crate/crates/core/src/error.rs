use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("transition matrix is reducible: state {to} is not reachable from state {from}")]
    Reducible { from: usize, to: usize },

    #[error("transition matrix is periodic with period {period}")]
    Periodic { period: usize },

    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },

    #[error("complete-data estimator requires observed regimes")]
    MissingRegimes,

    #[error("all emission densities underflowed at step {step}")]
    EmissionUnderflow { step: usize },

    #[error("zero normalizer while sampling at step {step}")]
    ZeroNormalizer { step: usize },

    #[error("path enumeration too large: {paths} paths exceed the limit of {limit}")]
    TooManyPaths { paths: f64, limit: usize },

    #[error("region [{lo}, {hi}] lies outside the grid span [{grid_lo}, {grid_hi}]")]
    RegionOutsideGrid {
        lo: f64,
        hi: f64,
        grid_lo: f64,
        grid_hi: f64,
    },

    #[error("non-finite update for regime {regime} at grid index {grid_index}")]
    NonFiniteUpdate { regime: usize, grid_index: usize },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// True for failures caused by bad user input rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Invalid(_)
            | Error::Config(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::Reducible { .. }
            | Error::Periodic { .. }
            | Error::MissingRegimes
            | Error::TooManyPaths { .. }
            | Error::RegionOutsideGrid { .. } => true,
            Error::Iteration { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
