//! The network: feature-axis attention, sequence-axis attention, a stacked
//! LSTM and an MLP regression head.

mod attention;
mod lstm;
mod mlp;
mod model;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attention::{multi_head_attention, scaled_dot_product_attention, MultiHeadAttention};
pub use lstm::{LstmLayer, LstmStack};
pub use mlp::MlpHead;
pub use model::{AttentionMaps, ForwardPass, Inference, RulModel};
pub use params::{ParamId, Parameter};

/// Which attention blocks are active.
///
/// - `L`: LSTM only.
/// - `A`: single-head attention on the feature axis.
/// - `F`: multi-head attention on the feature axis.
/// - `FT`: multi-head attention on the feature axis, then on the sequence axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "L")]
    L,
    #[serde(rename = "A")]
    A,
    #[serde(rename = "F")]
    F,
    #[serde(rename = "F+T")]
    FT,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::L, Mode::A, Mode::F, Mode::FT];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::L => "L",
            Mode::A => "A",
            Mode::F => "F",
            Mode::FT => "F+T",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "L" | "l" => Ok(Mode::L),
            "A" | "a" => Ok(Mode::A),
            "F" | "f" => Ok(Mode::F),
            "F+T" | "f+t" | "FT" | "ft" => Ok(Mode::FT),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}, expected one of L, A, F, F+T"
            ))),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input channels per time step (F).
    pub features: usize,
    /// Window length (T).
    pub window: usize,
    pub mode: Mode,
    /// Heads of the feature-axis block; 0 disables it.
    pub feature_heads: usize,
    /// Heads of the sequence-axis block; 0 disables it.
    pub sequence_heads: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(features: usize, window: usize) -> Self {
        ModelConfig {
            features,
            window,
            mode: Mode::FT,
            feature_heads: 5,
            sequence_heads: 4,
            lstm_layers: 3,
            lstm_hidden: 100,
            mlp_hidden: 100,
            dropout: 0.5,
        }
    }

    /// Head count of the feature-axis block, if it runs.
    pub fn active_feature_heads(&self) -> Option<usize> {
        match self.mode {
            Mode::L => None,
            Mode::A => Some(1),
            Mode::F | Mode::FT => (self.feature_heads > 0).then_some(self.feature_heads),
        }
    }

    /// Head count of the sequence-axis block, if it runs.
    pub fn active_sequence_heads(&self) -> Option<usize> {
        match self.mode {
            Mode::FT => (self.sequence_heads > 0).then_some(self.sequence_heads),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("features", self.features),
            ("window", self.window),
            ("lstm_layers", self.lstm_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if let Some(h) = self.active_feature_heads() {
            if !self.window.is_multiple_of(h) {
                return Err(Error::Config(format!(
                    "feature attention: {h} heads do not divide the window length {}",
                    self.window
                )));
            }
        }
        if let Some(h) = self.active_sequence_heads() {
            if !self.features.is_multiple_of(h) {
                return Err(Error::Config(format!(
                    "sequence attention: {h} heads do not divide the feature count {}",
                    self.features
                )));
            }
        }
        Ok(())
    }
}
