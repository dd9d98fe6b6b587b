use thiserror::Error;

/// Errors raised by the solvers, trackers and file readers.
#[derive(Debug, Error)]
pub enum SktError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("coefficient condition violated: {0}")]
    Condition(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("explicit step unstable: dt = {dt:e} exceeds the bound {bound:e}")]
    Stability { dt: f64, bound: f64 },

    #[error("linear solve did not converge after {iterations} iterations (residual history tail {tail:?})")]
    NoConvergence { iterations: usize, tail: Vec<f64> },

    #[error("non-finite value detected at step {step}")]
    NonFinite { step: usize },

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SktError {
    /// Process exit code: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SktError::Stability { .. }
            | SktError::NoConvergence { .. }
            | SktError::NonFinite { .. }
            | SktError::Singular(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn config(line: usize, key: impl Into<String>, message: impl Into<String>) -> Self {
        SktError::Config {
            line,
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = SktError> = std::result::Result<T, E>;
