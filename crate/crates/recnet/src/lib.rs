//! Encoder-decoder-reconstructor video captioner at desk scale.
//!
//! An attention LSTM decoder generates captions from precomputed frame
//! features and is trained by negative log-likelihood; a reconstructor
//! (global or local) reproduces the frame features from the decoder's hidden
//! states, and both are fine-tuned jointly under a lambda-weighted dual loss.
//! Everything runs on a small f64 tape with reverse-mode differentiation and
//! AdaDelta, deterministic given a seed.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod reconstructor;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;
pub mod util;

pub use error::{Error, Result};
