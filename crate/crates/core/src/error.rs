use thiserror::Error;

/// Errors raised by the simulator, the bandit and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DbarError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A plant step produced a non-finite state entry.
    #[error("state became non-finite at step {step}")]
    Explosion { step: usize },

    #[error("invalid batch schedule: {0}")]
    InvalidSchedule(String),

    /// Every controller in the pool has been falsified.
    #[error("controller pool is empty at batch {batch}; the beta/gamma envelope falsified every candidate")]
    EmptyPool { batch: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("no controller in the pool satisfies the stability envelope over the full horizon")]
    OracleUndefined,

    #[error("series length mismatch: {left} vs {right}")]
    HorizonMismatch { left: usize, right: usize },

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = DbarError> = std::result::Result<T, E>;

impl DbarError {
    pub fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        DbarError::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}
