//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument for {op}: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    #[error("non-finite value detected in {context}")]
    NonFinite { context: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("solver aborted at iteration {iter}: objective became non-finite")]
    SolverDiverged { iter: usize },

    #[error("adjoint check failed: relative deviation {deviation:.3e} exceeds {tolerance:.3e}")]
    AdjointCheck { deviation: f64, tolerance: f64 },

    #[error("weights file does not match the architecture: {detail}")]
    WeightsMismatch { detail: String },

    #[error("malformed {format} data at byte {offset}: {detail}")]
    Codec { format: &'static str, offset: usize, detail: String },

    #[error("unknown config key `{key}`")]
    UnknownConfigKey { key: String },

    #[error("invalid config value for `{key}`: {detail}")]
    ConfigValue { key: String, detail: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArg { op, detail: detail.into() }
    }
}
