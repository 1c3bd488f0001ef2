//! Conditional normalizing flows for attribute conversion of frame sequences.
//!
//! Mel-spectrogram-like matrices are encoded by an invertible multi-scale flow
//! conditioned on a speaker embedding, a normalized log-f0 contour, a voicing
//! flag and (optionally) phoneme features. Training maximizes the exact
//! likelihood under one of three priors; conversion encodes with the source
//! conditioning and decodes with the target speaker swapped in.

mod binio;
mod csvio;
pub mod conversion;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod flow;
pub mod numerics;
pub mod priors;
pub mod training;

pub use error::{Error, Result};
