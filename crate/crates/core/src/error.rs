use thiserror::Error;

/// Errors produced by the streamflow library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("time {t} outside the unit interval")]
    Domain { t: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged (non-finite loss) at step {step}")]
    Divergence { step: usize },

    #[error("step budget exhausted; last accepted t = {t}")]
    Stiffness { t: f64 },

    #[error("malformed {what}: {msg}")]
    Parse { what: &'static str, msg: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attach a training step index to a divergence error.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Divergence { .. } => Error::Divergence { step },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
