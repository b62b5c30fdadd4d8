use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. Categories map onto process exit codes in
/// the CLI: config/usage problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("{context}: spatial dims {h}x{w} must be even (caller must pad)")]
    OddSpatialDims { context: &'static str, h: usize, w: usize },

    #[error("{context}: channel count {channels} is not divisible by 4")]
    ChannelsNotSubbands { context: &'static str, channels: usize },

    #[error("{context}: spatial dims {h}x{w} must be multiples of 16")]
    NotMultipleOf16 { context: &'static str, h: usize, w: usize },

    #[error("backward requires a scalar loss, got shape {shape}")]
    NonScalarLoss { shape: String },

    #[error("non-finite gradient for parameter `{param}`; step rejected")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("io error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn image(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Image { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}
