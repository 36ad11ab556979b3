use rand::Rng;

use super::params::{Init, ParamBuilder, ParamId, Parameter};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// One LSTM layer. Gate columns of the `4H`-wide weights are ordered
/// input, forget, cell candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    input: usize,
    hidden: usize,
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

impl LstmLayer {
    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// `[input × 4H]` input-to-gates weights.
    pub fn w_ih(&self) -> ParamId {
        self.w_ih
    }

    /// `[H × 4H]` recurrent weights.
    pub fn w_hh(&self) -> ParamId {
        self.w_hh
    }

    /// `[4H]` gate biases.
    pub fn bias(&self) -> ParamId {
        self.bias
    }

    /// Runs the recurrence over `x: [B×T×input]` from zero state. Returns the
    /// final hidden state `[B×H]` and, if `keep_sequence`, all hidden states
    /// as `[B×T×H]`.
    fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
        keep_sequence: bool,
    ) -> Result<(Var, Option<Var>)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.input {
            return Err(Error::dim("lstm", &shape, &[self.input]));
        }
        let (b, steps, h) = (shape[0], shape[1], self.hidden);
        let flat = tape.reshape(x, &[b * steps, self.input])?;
        let proj = tape.matmul(flat, params[self.w_ih.0])?;
        let proj = tape.add_bias(proj, params[self.bias.0])?;
        let proj = tape.reshape(proj, &[b, steps, 4 * h])?;

        let mut state: Option<(Var, Var)> = None;
        let mut seq = Vec::with_capacity(if keep_sequence { steps } else { 0 });
        for t in 0..steps {
            let xt = tape.slice(proj, 1, t, 1)?;
            let mut z = tape.reshape(xt, &[b, 4 * h])?;
            if let Some((h_prev, _)) = state {
                let rec = tape.matmul(h_prev, params[self.w_hh.0])?;
                z = tape.add(z, rec)?;
            }
            let zi = tape.slice(z, 1, 0, h)?;
            let zf = tape.slice(z, 1, h, h)?;
            let zg = tape.slice(z, 1, 2 * h, h)?;
            let zo = tape.slice(z, 1, 3 * h, h)?;
            let i = tape.sigmoid(zi)?;
            let g = tape.tanh(zg)?;
            let o = tape.sigmoid(zo)?;
            let ig = tape.mul(i, g)?;
            // The zero initial cell state contributes nothing at t = 0.
            let c = match state {
                Some((_, c_prev)) => {
                    let f = tape.sigmoid(zf)?;
                    let fc = tape.mul(f, c_prev)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(c)?;
            let h_t = tape.mul(o, tc)?;
            if keep_sequence {
                seq.push(tape.reshape(h_t, &[b, 1, h])?);
            }
            state = Some((h_t, c));
        }
        let (h_last, _) = state.expect("window has at least one step");
        let seq = if keep_sequence {
            Some(if seq.len() == 1 { seq[0] } else { tape.concat(&seq, 1)? })
        } else {
            None
        };
        Ok((h_last, seq))
    }
}

/// Vertically stacked LSTM layers; layer `l > 0` reads layer `l-1`'s hidden
/// sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStack {
    layers: Vec<LstmLayer>,
}

impl LstmStack {
    /// Forget-gate bias starts at 1, every other bias at 0.
    pub(crate) fn build<S: Scalar, R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        layers: usize,
        pb: &mut ParamBuilder<'_, S, R>,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let in_size = if l == 0 { input } else { hidden };
                LstmLayer {
                    input: in_size,
                    hidden,
                    w_ih: pb.add(
                        format!("lstm.layer{l}.w_ih"),
                        &[in_size, 4 * hidden],
                        Init::Uniform { fan_in: in_size },
                    ),
                    w_hh: pb.add(
                        format!("lstm.layer{l}.w_hh"),
                        &[hidden, 4 * hidden],
                        Init::Uniform { fan_in: hidden },
                    ),
                    bias: pb.add(
                        format!("lstm.layer{l}.bias"),
                        &[4 * hidden],
                        Init::Segment {
                            start: hidden,
                            len: hidden,
                            value: 1.0,
                        },
                    ),
                }
            })
            .collect();
        LstmStack { layers }
    }

    /// A stack with its own freshly initialised parameter list.
    pub fn standalone<S: Scalar, R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> (Self, Vec<Parameter<S>>) {
        let mut pb = ParamBuilder::new(Some(rng));
        let stack = Self::build(input, hidden, layers, &mut pb);
        (stack, pb.params)
    }

    pub fn layers(&self) -> &[LstmLayer] {
        &self.layers
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden
    }

    /// `x: [B×T×input]` (time along axis 1) to the top layer's final hidden
    /// state `[B×H]`.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var], x: Var) -> Result<Var> {
        let mut input = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (h_last, seq) = layer.forward(tape, params, input, l < last)?;
            match seq {
                Some(seq) => input = seq,
                None => return Ok(h_last),
            }
        }
        unreachable!("stack has at least one layer")
    }

    /// Functional form over one `[F×T]` sample (columns are time steps).
    /// Returns the final top-layer hidden state as an `[H]` tensor.
    pub fn run<S: Scalar>(&self, params: &[Tensor<S>], sample: &Tensor<S>) -> Result<Tensor<S>> {
        let s = sample.shape();
        if s.len() != 2 {
            return Err(Error::dim("lstm_forward", s, &[]));
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let x = tape.constant(sample.transpose()?.reshape(&[1, s[1], s[0]])?);
        let h = self.forward(&mut tape, &vars, x)?;
        Tensor::vector(tape.value(h).data().to_vec())
    }
}
