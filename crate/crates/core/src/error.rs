use thiserror::Error;

/// Errors raised by the estimation laboratory.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid signal spec: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("signal is not differentiable in theta at theta={theta}, t={t}")]
    NotDifferentiable { theta: f64, t: f64 },

    #[error("{0} is not applicable to this signal family")]
    NotApplicable(&'static str),

    #[error("Kullback-Leibler minimizer sits on the {side} boundary (theta={theta}); the limit theory does not apply")]
    BoundaryMinimizer { side: BoundarySide, theta: f64 },

    #[error("Kullback-Leibler distance has several minimizers (near {first} and {second})")]
    NonUniqueMinimizer { first: f64, second: f64 },

    #[error("condition {condition} violated: value {value}")]
    ConditionViolated { condition: &'static str, value: f64 },

    #[error("standing assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("posterior mass underflows even after max-normalization")]
    NumericUnderflow,

    #[error("truncation too small: {hits} of {count} argmax samples beyond 0.9*U")]
    TruncationTooSmall { hits: usize, count: usize },

    #[error("unknown regime tag `{0}`")]
    UnknownRegime(String),

    #[error("unknown preset `{name}`; available presets: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("rate regression needs {needed} rungs with positive medians, got {got}")]
    InsufficientRungs { needed: usize, got: usize },

    #[error("degenerate sample: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for malformed or unsupported inputs, false for numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidInput(_)
                | Error::NotApplicable(_)
                | Error::UnknownRegime(_)
                | Error::UnknownPreset { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    Lower,
    Upper,
}

impl std::fmt::Display for BoundarySide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundarySide::Lower => f.write_str("lower"),
            BoundarySide::Upper => f.write_str("upper"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
