use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

/// Index of a parameter inside its model's parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
}

/// How a freshly allocated parameter is filled.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform {
        fan_in: usize,
    },
    Zeros,
    /// Zeros except `value` on `[start, start + len)`.
    Segment {
        start: usize,
        len: usize,
        value: f64,
    },
}

/// Allocates parameters in a fixed order; that order is the model's
/// parameter layout.
pub(crate) struct ParamBuilder<'r, S, R: Rng + ?Sized> {
    pub params: Vec<Parameter<S>>,
    rng: Option<&'r mut R>,
}

impl<'r, S: Scalar, R: Rng + ?Sized> ParamBuilder<'r, S, R> {
    /// With `rng == None` every parameter is zero.
    pub fn new(rng: Option<&'r mut R>) -> Self {
        ParamBuilder {
            params: Vec::new(),
            rng,
        }
    }

    pub fn add(&mut self, name: String, shape: &[usize], init: Init) -> ParamId {
        let mut t = Tensor::zeros(shape);
        if let Some(rng) = self.rng.as_deref_mut() {
            match init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for v in t.data_mut() {
                        *v = S::of(rng.random_range(-bound..=bound));
                    }
                }
                Init::Zeros => {}
                Init::Segment { start, len, value } => {
                    t.data_mut()[start..start + len].fill(S::of(value));
                }
            }
        }
        self.params.push(Parameter { name, value: t });
        ParamId(self.params.len() - 1)
    }
}
