//! Dynamically reweighted token losses, n-gram repetition metrics and a
//! small LSTM encoder-decoder for studying repetitive generation.

pub mod cli;
pub mod error;
pub mod loss_weighting;
pub mod seq2seq;
pub mod tensor;
pub mod text_metrics;
pub mod training;

pub use error::{Error, Result};
