//! Desk-scale receipt OCR, built from first principles.
//!
//! The pipeline has four stages:
//!
//! 1. [`preprocess`] — histogram-based receipt area extraction, so a small
//!    receipt photographed on a dark scan bed fills the detector input.
//! 2. [`detector`] — anchor-based text line detection: a small convolutional
//!    backbone, a per-row bidirectional LSTM, classification/regression heads
//!    over fixed-width vertical proposals, and graph-based merging of
//!    proposals into text lines.
//! 3. [`recognizer`] — attention-based encoder-decoder line recognition with
//!    a densely connected convolutional encoder and a `<handwriting>`
//!    rejection category used for OCR verification.
//! 4. [`metrics`] — tightness-aware IoU detection scoring and word-level F1
//!    for end-to-end evaluation.
//!
//! Everything runs on [`tensor`], a minimal reverse-mode autodiff tape over
//! 64-bit row-major arrays, and [`raster`], a grayscale image type with
//! PGM/PPM I/O. [`synthgen`] produces deterministic synthetic receipts so the
//! whole system can be trained and evaluated without any external corpus.

pub mod detector;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod recognizer;
pub mod rng;
pub mod synthgen;
pub mod tensor;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
