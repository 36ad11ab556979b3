use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, clip_grad_norm, mse_loss, AdamState, TrainConfig};
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::nn::{Parameter, RulModel};
use crate::seed::{self, Stream};
use crate::tensor::{Scalar, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error over every training window of the epoch.
    pub train_loss: f64,
    pub val_rmse: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub stopped_early: bool,
    pub steps: u64,
    pub train_units: Vec<u32>,
    pub val_units: Vec<u32>,
}

/// Seeded shuffle of series indices into `(train, validation)`; at least one
/// unit lands on each side.
pub fn split_units(units: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if units < 2 {
        return Err(Error::Contract(format!(
            "{units} training unit(s): need at least 2 to hold out a validation split"
        )));
    }
    let mut order: Vec<usize> = (0..units).collect();
    order.shuffle(&mut seed::rng(seed, Stream::Split));
    let n_val = ((units as f64 * fraction).round() as usize).clamp(1, units - 1);
    let mut val = order.split_off(units - n_val);
    order.sort_unstable();
    val.sort_unstable();
    Ok((order, val))
}

/// Shuffles `windows` and cuts it into consecutive batches of at most
/// `batch_size`; the last batch may be short.
pub fn epoch_batches<R: Rng + ?Sized>(windows: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order = windows.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Root mean squared error of `model` over the given windows, without dropout.
pub fn rmse_on<S: Scalar>(model: &RulModel<S>, data: &WindowSet, windows: &[usize], batch_size: usize) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Contract("rmse over zero windows".into()));
    }
    let mut sq = 0.0;
    for chunk in windows.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let pred = model.predict(&x.cast())?;
        for (p, t) in pred.iter().zip(y.data()) {
            let d = p.as_f64() - *t as f64;
            sq += d * d;
        }
    }
    Ok((sq / windows.len() as f64).sqrt())
}

pub fn fit<S: Scalar>(model: &mut RulModel<S>, data: &WindowSet, cfg: &TrainConfig) -> Result<TrainingLog> {
    fit_with(model, data, cfg, |_| {})
}

/// Trains `model` in place and restores the parameters of the best
/// validation epoch. `on_epoch` sees every record as it is produced.
pub fn fit_with<S: Scalar>(
    model: &mut RulModel<S>,
    data: &WindowSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    if data.window != model.config().window {
        return Err(Error::dim(
            "fit: window length",
            &[data.window],
            &[model.config().window],
        ));
    }
    let (train_series, val_series) = split_units(data.series.len(), cfg.validation_fraction, cfg.seed)?;
    let mut is_val = vec![false; data.series.len()];
    for &s in &val_series {
        is_val[s] = true;
    }
    let (mut train_w, mut val_w) = (Vec::new(), Vec::new());
    for (w, r) in data.index.iter().enumerate() {
        if is_val[r.series] {
            val_w.push(w);
        } else {
            train_w.push(w);
        }
    }

    let mut shuffle = seed::rng(cfg.seed, Stream::Shuffle);
    let mut dropout = seed::rng(cfg.seed, Stream::Dropout);
    let mut adam = AdamState::new(model.params());
    let mut best: Option<(f64, usize, Vec<Parameter<S>>)> = None;
    let mut since_best = 0;
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_rmse: f64::INFINITY,
        stopped_early: false,
        steps: 0,
        train_units: train_series.iter().map(|&s| data.series[s].unit_id).collect(),
        val_units: val_series.iter().map(|&s| data.series[s].unit_id).collect(),
    };

    for epoch in 1..=cfg.max_epochs {
        let mut sq_sum = 0.0;
        for batch in epoch_batches(&train_w, cfg.batch_size, &mut shuffle) {
            let (x, y) = data.batch(&batch);
            let mut tape = Tape::<S>::new();
            let vars = model.bind(&mut tape);
            let xv = tape.constant(x.cast());
            let yv = tape.constant(y.cast());
            let pass = model.forward(&mut tape, &vars, xv, Some(&mut dropout))?;
            let loss = mse_loss(&mut tape, pass.prediction, yv)?;
            let lv = tape.value(loss).data()[0].as_f64();
            if !lv.is_finite() {
                return Err(Error::NumericInput("training loss"));
            }
            sq_sum += lv * batch.len() as f64;
            tape.backward(loss)?;
            let mut grads: Vec<Vec<S>> = vars
                .iter()
                .zip(model.params())
                .map(|(&v, p)| {
                    tape.grad(v)
                        .map_or_else(|| vec![S::zero(); p.value.len()], <[S]>::to_vec)
                })
                .collect();
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            adam_step(model.params_mut(), &grads, &mut adam, cfg.learning_rate)?;
            log.steps += 1;
        }
        let val_rmse = rmse_on(model, data, &val_w, cfg.batch_size)?;
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_rmse < *b);
        if improved {
            best = Some((val_rmse, epoch, model.params().to_vec()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: sq_sum / train_w.len() as f64,
            val_rmse,
            improved,
        };
        on_epoch(&record);
        log.epochs.push(record);
        if since_best >= cfg.patience {
            log.stopped_early = true;
            break;
        }
    }

    let (rmse, epoch, params) = best.expect("at least one epoch");
    for (slot, p) in model.params_mut().iter_mut().zip(params) {
        *slot = p;
    }
    log.best_epoch = epoch;
    log.best_val_rmse = rmse;
    Ok(log)
}
