use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamBuilder, ParamId};
use crate::error::Result;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// `Linear(H → hidden) → ReLU → dropout → Linear(hidden → 1)`.
///
/// Dropout is inverted: kept units are scaled by `1/(1-p)` during training
/// so inference uses every unit unscaled.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    input: usize,
    hidden: usize,
    dropout: f64,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl MlpHead {
    pub(crate) fn build<S: Scalar, R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        dropout: f64,
        pb: &mut ParamBuilder<'_, S, R>,
    ) -> Self {
        MlpHead {
            input,
            hidden,
            dropout,
            w1: pb.add(
                "head.hidden.weight".into(),
                &[input, hidden],
                Init::Uniform { fan_in: input },
            ),
            b1: pb.add("head.hidden.bias".into(), &[hidden], Init::Zeros),
            w2: pb.add(
                "head.output.weight".into(),
                &[hidden, 1],
                Init::Uniform { fan_in: hidden },
            ),
            b2: pb.add("head.output.bias".into(), &[1], Init::Zeros),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn output_bias(&self) -> ParamId {
        self.b2
    }

    /// `features: [B×H]` to predictions `[B]`. Dropout runs only when an RNG
    /// is supplied.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        features: Var,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let b = tape.shape(features)[0];
        let z = tape.matmul(features, params[self.w1.0])?;
        let z = tape.add_bias(z, params[self.b1.0])?;
        let mut a = tape.relu(z)?;
        if let Some(rng) = dropout_rng {
            if self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let scale = S::of(1.0 / keep);
                let mut mask = Tensor::<S>::zeros(&[b, self.hidden]);
                for m in mask.data_mut() {
                    if rng.random::<f64>() < keep {
                        *m = scale;
                    }
                }
                let mask = tape.constant(mask);
                a = tape.mul(a, mask)?;
            }
        }
        let y = tape.matmul(a, params[self.w2.0])?;
        let y = tape.add_bias(y, params[self.b2.0])?;
        tape.reshape(y, &[b])
    }
}
