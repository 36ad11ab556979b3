use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamBuilder, Parameter};
use super::{LstmStack, MlpHead, ModelConfig, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Full network: optional feature-axis attention, optional sequence-axis
/// attention, LSTM stack, MLP head.
///
/// Inputs are `F×T` windows: one row per channel, one column per time step.
/// Parameters live in one flat list; layers refer to them by [`ParamId`].
///
/// [`ParamId`]: super::ParamId
#[derive(Clone, Debug, PartialEq)]
pub struct RulModel<S> {
    config: ModelConfig,
    params: Vec<Parameter<S>>,
    feature_attention: Option<MultiHeadAttention>,
    sequence_attention: Option<MultiHeadAttention>,
    lstm: LstmStack,
    head: MlpHead,
}

/// Handles produced by one taped forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `[B]` predictions.
    pub prediction: Var,
    /// Per head, `[B×F×F]` feature-attention weights.
    pub feature_weights: Vec<Var>,
    /// Per head, `[B×T×T]` sequence-attention weights.
    pub sequence_weights: Vec<Var>,
}

/// Attention weights of a single sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps<S> {
    /// Per head, `F×F`; row `i` is how sensor `i` attends to every sensor.
    pub feature: Vec<Tensor<S>>,
    /// Per head, `T×T`.
    pub sequence: Vec<Tensor<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference<S> {
    pub rul: S,
    pub attention: AttentionMaps<S>,
}

impl<S: Scalar> RulModel<S> {
    /// Randomly initialised model.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        Self::assemble(config, Some(rng))
    }

    /// Model with every parameter zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        Self::assemble::<ChaCha8Rng>(config, None)
    }

    fn assemble<R: Rng + ?Sized>(config: ModelConfig, rng: Option<&mut R>) -> Result<Self> {
        config.validate()?;
        let mut pb = ParamBuilder::new(rng);
        let feature_attention = config
            .active_feature_heads()
            .map(|h| MultiHeadAttention::build("feature_attention", config.window, h, &mut pb))
            .transpose()?;
        let sequence_attention = config
            .active_sequence_heads()
            .map(|h| MultiHeadAttention::build("sequence_attention", config.features, h, &mut pb))
            .transpose()?;
        let lstm = LstmStack::build(config.features, config.lstm_hidden, config.lstm_layers, &mut pb);
        let head = MlpHead::build(config.lstm_hidden, config.mlp_hidden, config.dropout, &mut pb);
        Ok(RulModel {
            config,
            params: pb.params,
            feature_attention,
            sequence_attention,
            lstm,
            head,
        })
    }

    /// Rebuilds a model from stored parameters; names and shapes must match
    /// the layout implied by `config` exactly.
    pub fn from_parameters(config: ModelConfig, params: Vec<Parameter<S>>) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (slot, p) in model.params.iter_mut().zip(params) {
            if slot.name != p.name || slot.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    slot.name,
                    slot.value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            *slot = p;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<S>] {
        &mut self.params
    }

    pub fn param(&self, id: super::ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn param_mut(&mut self, id: super::ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn feature_attention(&self) -> Option<&MultiHeadAttention> {
        self.feature_attention.as_ref()
    }

    pub fn sequence_attention(&self) -> Option<&MultiHeadAttention> {
        self.sequence_attention.as_ref()
    }

    pub fn lstm(&self) -> &LstmStack {
        &self.lstm
    }

    pub fn head(&self) -> &MlpHead {
        &self.head
    }

    pub fn cast<T: Scalar>(&self) -> RulModel<T> {
        RulModel {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            feature_attention: self.feature_attention.clone(),
            sequence_attention: self.sequence_attention.clone(),
            lstm: self.lstm.clone(),
            head: self.head.clone(),
        }
    }

    /// Registers every parameter on `tape` as a gradient-receiving leaf, in
    /// layout order.
    pub fn bind(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Registers every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.value.clone())).collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (f, t) = (self.config.features, self.config.window);
        if shape.len() != 3 || shape[1] != f || shape[2] != t {
            return Err(Error::dim("model input [B, F, T]", shape, &[f, t]));
        }
        Ok(())
    }

    fn as_batch(&self, sample: &Tensor<S>) -> Result<Tensor<S>> {
        let s = sample.shape();
        let (f, t) = (self.config.features, self.config.window);
        if s != [f, t] {
            return Err(Error::dim("model input [F, T]", s, &[f, t]));
        }
        sample.clone().reshape(&[1, f, t])
    }

    /// Feature-axis block on `x: [B×F×T]`: each channel's `T`-step series is a
    /// token. Identity when the block is disabled.
    pub fn feature_attention_forward(&self, tape: &mut Tape<S>, params: &[Var], x: Var) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.shape(x))?;
        match &self.feature_attention {
            Some(layer) => layer.forward(tape, params, x),
            None => Ok((x, Vec::new())),
        }
    }

    /// Sequence-axis block on `x: [B×F×T]`: each time step's `F` readings are
    /// a token. Identity when the block is disabled.
    pub fn sequence_attention_forward(&self, tape: &mut Tape<S>, params: &[Var], x: Var) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.shape(x))?;
        match &self.sequence_attention {
            Some(layer) => {
                let xt = tape.transpose(x)?;
                let (out, w) = layer.forward(tape, params, xt)?;
                Ok((tape.transpose(out)?, w))
            }
            None => Ok((x, Vec::new())),
        }
    }

    /// Taped forward pass over a batch `x: [B×F×T]`. Dropout is applied iff
    /// `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} bound parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let (x, feature_weights) = self.feature_attention_forward(tape, params, x)?;
        let (x, sequence_weights) = self.sequence_attention_forward(tape, params, x)?;
        let steps = tape.transpose(x)?;
        let h = self.lstm.forward(tape, params, steps)?;
        let prediction = self.head.forward(tape, params, h, dropout_rng)?;
        Ok(ForwardPass {
            prediction,
            feature_weights,
            sequence_weights,
        })
    }

    /// Inference over a `[B×F×T]` batch.
    pub fn predict(&self, batch: &Tensor<S>) -> Result<Vec<S>> {
        self.check_input(batch.shape())?;
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let x = tape.constant(batch.clone());
        let pass = self.forward(&mut tape, &params, x, None)?;
        Ok(tape.value(pass.prediction).data().to_vec())
    }

    /// Scalar prediction for one `F×T` sample; dropout iff `dropout_rng`.
    pub fn forward_sample(&self, sample: &Tensor<S>, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<S> {
        let batch = self.as_batch(sample)?;
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let x = tape.constant(batch);
        let pass = self.forward(&mut tape, &params, x, dropout_rng)?;
        Ok(tape.value(pass.prediction).data()[0])
    }

    /// Inference on one `F×T` sample, keeping the attention weights.
    pub fn infer(&self, sample: &Tensor<S>) -> Result<Inference<S>> {
        let batch = self.as_batch(sample)?;
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let x = tape.constant(batch);
        let pass = self.forward(&mut tape, &params, x, None)?;
        let squeeze = |tape: &Tape<S>, v: Var| -> Tensor<S> {
            let t = tape.value(v);
            t.clone().reshape(&t.shape()[1..]).expect("drop batch axis")
        };
        Ok(Inference {
            rul: tape.value(pass.prediction).data()[0],
            attention: AttentionMaps {
                feature: pass.feature_weights.iter().map(|&w| squeeze(&tape, w)).collect(),
                sequence: pass.sequence_weights.iter().map(|&w| squeeze(&tape, w)).collect(),
            },
        })
    }
}
