//! Error type shared across the pipeline.

use thiserror::Error;

/// Errors produced anywhere in the OCR pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed PGM/PPM stream. `offset` is the byte position of the defect.
    #[error("image format error at byte {offset}: {reason}")]
    ImageFormat { offset: usize, reason: String },

    /// Tensor shape disagreement; the message names both sides.
    #[error("shape error: {0}")]
    Shape(String),

    /// Histogram extraction found no paper pixels at all.
    #[error("no receipt area found: image has no paper-colored pixels")]
    NoReceipt,

    /// Crop rectangle does not intersect the image.
    #[error("empty intersection: crop rectangle lies outside the image")]
    EmptyIntersection,

    /// A dataset annotation file failed to parse.
    #[error("parse error in {path} line {line}: {reason}")]
    DatasetParse {
        path: String,
        line: usize,
        reason: String,
    },

    /// Checkpoint bytes are malformed or incompatible with the config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Bad configuration value (CLI flag or config file).
    #[error("config error: {0}")]
    Config(String),

    /// The bitmap font has no glyph for this character.
    #[error("unsupported character {0:?} (not in the built-in font)")]
    UnsupportedChar(char),

    /// Training was asked to run on an empty dataset.
    #[error("empty dataset")]
    EmptyDataset,

    /// Anything else with a one-line explanation.
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
