use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("singular Gram matrix: particles {i} and {j} are (numerically) coincident")]
    SingularGram { i: usize, j: usize },

    #[error("non-finite log-density {value} at probe point of particle {particle}")]
    NonFiniteLogDensity { particle: usize, value: f64 },

    #[error("non-finite score at probe point of particle {particle}")]
    NonFiniteScore { particle: usize },

    #[error("target density vanishes at every probe point")]
    VanishingDensity,

    #[error("estimator `{0}` is unavailable: target has no score")]
    EstimatorUnavailable(&'static str),

    #[error("target has no analytic kernel embeddings")]
    AnalyticUnavailable,

    #[error("degenerate weight {weight:e} for particle {particle}")]
    DegenerateWeight { particle: usize, weight: f64 },

    #[error("run diverged at iteration {iteration}: non-finite position for particle {particle}")]
    Diverged { iteration: usize, particle: usize },

    #[error("weights sum to {sum:e}; cannot normalize")]
    NonNormalizable { sum: f64 },

    #[error("consensus is undefined: every particle has zero density")]
    DegenerateConsensus,

    #[error("unknown benchmark target `{0}`")]
    UnknownTarget(String),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
