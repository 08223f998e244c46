use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the inpainting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("palette error: {0}")]
    Palette(String),

    /// Pixels of a pseudo-color image that match no palette entry.
    /// `pixels` holds `(row, col)` pairs, truncated to the first few offenders.
    #[error("unknown color at {} pixel(s), first offenders (row, col): {pixels:?}", total)]
    UnknownColor {
        pixels: Vec<(usize, usize)>,
        total: usize,
    },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("mask generation failed: {0}")]
    Generation(String),

    /// A segmenter returned maps that are not per-pixel probability distributions.
    #[error("segmenter contract violation: {0}")]
    Contract(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite {loss} loss at iteration {iteration}")]
    NonFinite { loss: String, iteration: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("shape mismatch for parameter `{key}`: checkpoint has {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        key: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("missing parameter `{0}` in checkpoint")]
    MissingParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
