//! Error categories shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad dimensions, unknown template id, empty manifest, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Border geometry violates `2p < min(H, W)`.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Malformed runtime input (shape mismatch, empty sequence, degenerate bbox, ...).
    #[error("input error: {0}")]
    Input(String),

    /// An API contract was violated (e.g. substituting into a sequence without an `[ID]` slot).
    #[error("contract error: {0}")]
    Contract(String),

    /// Numerically undefined operation (zero-norm cosine, non-finite gradient).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Checkpoint file failed validation on load.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Metric undefined for the given inputs (e.g. AUC with a single class).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Manifest row failed validation; `line` is 1-based.
    #[error("manifest error at line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category tag, used by the CLI for exit handling.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Geometry(_) => "geometry",
            Error::Input(_) => "input",
            Error::Contract(_) => "contract",
            Error::Numeric(_) => "numeric",
            Error::CorruptCheckpoint(_) => "checkpoint",
            Error::UndefinedMetric(_) => "metric",
            Error::Manifest { .. } => "manifest",
            Error::Io(_) => "io",
        }
    }
}
