//! Remaining-useful-life estimation with feature-axis and sequence-axis
//! multi-head self-attention in front of a stacked LSTM.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors and a define-by-run reverse-mode tape.
//! - [`nn`]: attention layers, the LSTM stack, the MLP head and [`nn::RulModel`].
//! - [`data`]: C-MAPSS ingestion, operating-condition clustering,
//!   normalisation and windowing.
//! - [`train`]: loss, Adam, the training loop and checkpoints.
//! - [`eval`]: RMSE / PHM score, test-set reports and attention export.

pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
