use rand::Rng;

use super::params::{Init, ParamBuilder, ParamId, Parameter};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// `softmax(Q Kᵀ / sqrt(d_k)) V` on `[B×n×d]` tensors, softmax over the key
/// axis. Returns the output and the `[B×n_q×n_k]` attention weights.
pub(crate) fn attend<S: Scalar>(tape: &mut Tape<S>, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (sq, sk, sv) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if sq.len() != 3 || sk.len() != 3 || sq[0] != sk[0] || sq[2] != sk[2] {
        return Err(Error::dim("attention(Q, K)", &sq, &sk));
    }
    if sv.len() != 3 || sv[0] != sk[0] || sv[1] != sk[1] {
        return Err(Error::dim("attention(K, V)", &sk, &sv));
    }
    let d_k = sq[2];
    if d_k == 0 {
        return Err(Error::Contract("attention key width d_k must be positive".into()));
    }
    let kt = tape.transpose(k)?;
    let scores = tape.batch_matmul(q, kt)?;
    let scaled = tape.scale(scores, S::of(1.0 / (d_k as f64).sqrt()))?;
    let weights = tape.softmax(scaled, 2)?;
    let out = tape.batch_matmul(weights, v)?;
    Ok((out, weights))
}

/// Scaled dot-product attention on rank-2 inputs: `Q [n×d_k]`, `K [m×d_k]`,
/// `V [m×d_v]`. Returns `([n×d_v] output, [n×m] weights)`.
pub fn scaled_dot_product_attention<S: Scalar>(tape: &mut Tape<S>, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let lift = |tape: &mut Tape<S>, x: Var| -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("scaled_dot_product_attention", &s, &[]));
        }
        tape.reshape(x, &[1, s[0], s[1]])
    };
    let (q3, k3, v3) = (lift(tape, q)?, lift(tape, k)?, lift(tape, v)?);
    let (out, weights) = attend(tape, q3, k3, v3)?;
    let (n, m, dv) = (tape.shape(q)[0], tape.shape(k)[0], tape.shape(v)[1]);
    Ok((tape.reshape(out, &[n, dv])?, tape.reshape(weights, &[n, m])?))
}

/// Self-attention with `h` heads over tokens of width `d_model`.
///
/// Head `i` projects the input with its own `W_i^Q`, `W_i^K`, `W_i^V`
/// (`d_model × d_head`, `d_head = d_model / h`); the concatenated head
/// outputs are mapped back to `d_model` by `W^O`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    d_model: usize,
    heads: usize,
    w_q: Vec<ParamId>,
    w_k: Vec<ParamId>,
    w_v: Vec<ParamId>,
    w_o: ParamId,
}

impl MultiHeadAttention {
    pub(crate) fn build<S: Scalar, R: Rng + ?Sized>(
        prefix: &str,
        d_model: usize,
        heads: usize,
        pb: &mut ParamBuilder<'_, S, R>,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{prefix}: head count {heads} must be a positive factor of the embedding width {d_model}"
            )));
        }
        let d_head = d_model / heads;
        let mut proj = |kind: &str| -> Vec<ParamId> {
            (0..heads)
                .map(|i| {
                    pb.add(
                        format!("{prefix}.head{i}.w_{kind}"),
                        &[d_model, d_head],
                        Init::Uniform { fan_in: d_model },
                    )
                })
                .collect()
        };
        let w_q = proj("q");
        let w_k = proj("k");
        let w_v = proj("v");
        let w_o = pb.add(
            format!("{prefix}.w_o"),
            &[heads * d_head, d_model],
            Init::Uniform { fan_in: heads * d_head },
        );
        Ok(MultiHeadAttention {
            d_model,
            heads,
            w_q,
            w_k,
            w_v,
            w_o,
        })
    }

    /// A layer with its own freshly initialised parameter list.
    pub fn standalone<S: Scalar, R: Rng + ?Sized>(
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<(Self, Vec<Parameter<S>>)> {
        let mut pb = ParamBuilder::new(Some(rng));
        let layer = Self::build("attention", d_model, heads, &mut pb)?;
        Ok((layer, pb.params))
    }

    /// A layer with explicit per-head projections and output matrix.
    pub fn with_weights<S: Scalar>(
        w_q: Vec<Tensor<S>>,
        w_k: Vec<Tensor<S>>,
        w_v: Vec<Tensor<S>>,
        w_o: Tensor<S>,
    ) -> Result<(Self, Vec<Parameter<S>>)> {
        let heads = w_q.len();
        let d_model = w_o.shape()[w_o.rank() - 1];
        let mut pb = ParamBuilder::<S, rand_chacha::ChaCha8Rng>::new(None);
        let layer = Self::build("attention", d_model, heads, &mut pb)?;
        let supplied = w_q.into_iter().chain(w_k).chain(w_v).chain(std::iter::once(w_o));
        let mut count = 0;
        for (slot, t) in pb.params.iter_mut().zip(supplied) {
            if slot.value.shape() != t.shape() {
                return Err(Error::dim("attention weights", slot.value.shape(), t.shape()));
            }
            slot.value = t;
            count += 1;
        }
        if count != pb.params.len() {
            return Err(Error::Contract("need one Q, K and V matrix per head".into()));
        }
        Ok((layer, pb.params))
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn query(&self, head: usize) -> ParamId {
        self.w_q[head]
    }

    pub fn key(&self, head: usize) -> ParamId {
        self.w_k[head]
    }

    pub fn value(&self, head: usize) -> ParamId {
        self.w_v[head]
    }

    pub fn output(&self) -> ParamId {
        self.w_o
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.w_q
            .iter()
            .chain(&self.w_k)
            .chain(&self.w_v)
            .copied()
            .chain(std::iter::once(self.w_o))
    }

    /// Self-attention over `x: [B×n×d_model]`. Returns the `[B×n×d_model]`
    /// output and one `[B×n×n]` weight tensor per head.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var], x: Var) -> Result<(Var, Vec<Var>)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.d_model {
            return Err(Error::dim("multi_head_attention", &shape, &[self.d_model]));
        }
        let (b, n) = (shape[0], shape[1]);
        let dh = self.d_head();
        let flat = tape.reshape(x, &[b * n, self.d_model])?;
        let project = |tape: &mut Tape<S>, ids: &[ParamId]| -> Result<Var> {
            let w: Vec<Var> = ids.iter().map(|id| params[id.0]).collect();
            let w = if w.len() == 1 { w[0] } else { tape.concat(&w, 1)? };
            tape.matmul(flat, w)
        };
        let q = project(tape, &self.w_q)?;
        let k = project(tape, &self.w_k)?;
        let v = project(tape, &self.w_v)?;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let head_slice = |tape: &mut Tape<S>, t: Var| -> Result<Var> {
                let s = if self.heads == 1 {
                    t
                } else {
                    tape.slice(t, 1, h * dh, dh)?
                };
                tape.reshape(s, &[b, n, dh])
            };
            let (qh, kh, vh) = (head_slice(tape, q)?, head_slice(tape, k)?, head_slice(tape, v)?);
            let (out, w) = attend(tape, qh, kh, vh)?;
            outs.push(out);
            weights.push(w);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat(&outs, 2)?
        };
        let joined = tape.reshape(joined, &[b * n, self.heads * dh])?;
        let projected = tape.matmul(joined, params[self.w_o.0])?;
        Ok((tape.reshape(projected, &[b, n, self.d_model])?, weights))
    }
}

/// Rank-2 convenience wrapper: self-attention of `x: [n×d_model]`.
/// Returns `([n×d_model] output, per-head [n×n] weights)`.
pub fn multi_head_attention<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &MultiHeadAttention,
    params: &[Var],
    x: Var,
) -> Result<(Var, Vec<Var>)> {
    let s = tape.shape(x).to_vec();
    if s.len() != 2 || s[1] != layer.d_model {
        return Err(Error::dim("multi_head_attention", &s, &[layer.d_model]));
    }
    let x3 = tape.reshape(x, &[1, s[0], s[1]])?;
    let (out, weights) = layer.forward(tape, params, x3)?;
    let out = tape.reshape(out, &s)?;
    let weights = weights
        .into_iter()
        .map(|w| tape.reshape(w, &[s[0], s[0]]))
        .collect::<Result<_>>()?;
    Ok((out, weights))
}
