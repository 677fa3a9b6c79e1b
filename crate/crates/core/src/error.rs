use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("tensor file format error: {0}")]
    Format(String),

    #[error("tensor file corrupted: {0}")]
    Corruption(String),

    /// A non-finite value surfaced while evaluating a function or gradient.
    #[error("non-finite value at {stage}: {detail}")]
    NonFinite { stage: String, detail: String },

    /// Gradient descent blew up. Carries the loss trace up to the failure.
    #[error("optimization diverged after {} iterations: {hint}", trace.len())]
    Divergence { trace: Vec<f64>, hint: String },

    #[error("cannot split {n} records into clusters of {k}: {remainder} left over")]
    Leftover { n: usize, k: usize, remainder: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("power iteration did not converge for component {component} after {sweeps} sweeps")]
    Convergence { component: usize, sweeps: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn non_finite(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NonFinite {
            stage: stage.into(),
            detail: detail.into(),
        }
    }
}
