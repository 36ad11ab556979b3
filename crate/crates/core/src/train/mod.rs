//! Loss, optimiser, the training loop and checkpoints.

mod checkpoint;
mod fit;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mode, ModelConfig, Parameter};
use crate::tensor::{Scalar, Tape, Var};

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, MAGIC, VERSION};
pub use fit::{epoch_batches, fit, fit_with, rmse_on, split_units, EpochRecord, TrainingLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without a strictly better validation RMSE before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Share of training units held out for validation.
    pub validation_fraction: f64,
    pub r_max: u32,
    pub window: usize,
    pub feature_heads: usize,
    pub sequence_heads: usize,
    pub seed: u64,
    /// Global gradient-norm cap; off when `None`.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            batch_size: 128,
            patience: 50,
            max_epochs: 500,
            validation_fraction: 0.1,
            r_max: 125,
            window: 30,
            feature_heads: 5,
            sequence_heads: 4,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.r_max == 0 || self.window == 0 {
            return bad("r_max and window must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Architecture defaults with this config's window and head counts.
    pub fn model_config(&self, features: usize, mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            feature_heads: self.feature_heads,
            sequence_heads: self.sequence_heads,
            ..ModelConfig::new(features, self.window)
        }
    }
}

/// `(1/N) Σ (pred_i - truth_i)^2` on the tape.
pub fn mse_loss<S: Scalar>(tape: &mut Tape<S>, pred: Var, truth: Var) -> Result<Var> {
    let (p, t) = (tape.shape(pred).to_vec(), tape.shape(truth).to_vec());
    if p != t {
        return Err(Error::Contract(format!("mse_loss: prediction {p:?} vs truth {t:?}")));
    }
    let diff = tape.sub(pred, truth)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

/// Adam moments for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<S: Scalar>(params: &[Parameter<S>]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update of every parameter in place.
pub fn adam_step<S: Scalar>(
    params: &mut [Parameter<S>],
    grads: &[Vec<S>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.value.len() != g.len() || m.len() != g.len() {
            return Err(Error::Contract(format!(
                "adam_step: {} has {} values but {} gradients",
                p.name,
                p.value.len(),
                g.len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, x) in p.value.data_mut().iter_mut().enumerate() {
            let g = grads[i][j].as_f64();
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + state.eps);
            *x = S::of(x.as_f64() - update);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm<S: Scalar>(grads: &mut [Vec<S>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *v = S::of(v.as_f64() * k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(v: f64) -> Vec<Parameter<f64>> {
        vec![Parameter {
            name: "p".into(),
            value: Tensor::scalar(v),
        }]
    }

    #[test]
    fn mse_examples() {
        for (p, t, want) in [
            (vec![1.0, 2.0], vec![1.0, 2.0], 0.0),
            (vec![0.0], vec![2.0], 4.0),
            (vec![1.0, 2.0], vec![3.0, 6.0], 10.0),
        ] {
            let mut tape = Tape::<f64>::new();
            let pv = tape.constant(Tensor::vector(p).unwrap());
            let tv = tape.constant(Tensor::vector(t).unwrap());
            let l = mse_loss(&mut tape, pv, tv).unwrap();
            assert_eq!(tape.value(l).data(), &[want]);
        }
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![1.0]).unwrap());
        assert!(matches!(mse_loss(&mut tape, a, b), Err(Error::Contract(_))));
    }

    #[test]
    fn adam_first_step() {
        let mut p = scalar_param(0.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![1.0]], &mut st, 2e-4).unwrap();
        let got = p[0].value.data()[0];
        assert!((got + 2e-4 / (1.0 + 1e-8)).abs() < 1e-18);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op_and_signs_are_respected() {
        let mut p = scalar_param(0.5);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0]], &mut st, 0.1).unwrap();
        assert_eq!(p[0].value.data()[0], 0.5);
        let mut prev = 0.5;
        for _ in 0..2 {
            adam_step(&mut p, &[vec![-3.0]], &mut st, 0.1).unwrap();
            assert!(p[0].value.data()[0] > prev);
            prev = p[0].value.data()[0];
        }
        assert!(matches!(
            adam_step(&mut p, &[vec![1.0, 2.0]], &mut st, 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![vec![3.0f64], vec![4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                validation_fraction: 0.0,
                ..Default::default()
            },
            TrainConfig {
                validation_fraction: 1.0,
                ..Default::default()
            },
            TrainConfig {
                patience: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
