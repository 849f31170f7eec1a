use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("auxiliary-input error: {0}")]
    AuxInput(String),

    #[error("weight error: {0}")]
    Weight(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("version error: file has version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("build error at layer {layer}: {reason}")]
    Build { layer: usize, reason: String },

    #[error("training diverged: loss is not finite at iteration {iteration}")]
    Divergence { iteration: u64 },

    #[error("degenerate evaluation: {0}")]
    DegenerateEval(String),

    #[error("missing class: class {0} has no examples")]
    MissingClass(u8),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for errors caused by bad user input or configuration rather than
    /// by a failure while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parameter(_) | Error::Build { .. } | Error::Json(_)
        )
    }
}
