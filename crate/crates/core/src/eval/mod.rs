//! Metrics, test-set reports and attention export.

mod attention;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{ConditionModel, RawTrajectory, WindowSet};
use crate::error::{Error, Result};
use crate::nn::RulModel;
use crate::tensor::{Scalar, Tensor};

pub use attention::{
    channel_name, export_attention, write_attention_feature, write_cycle_sums, AttentionExport, CycleAttention,
};

/// Divisor for early predictions (`d < 0`).
pub const EARLY_DIVISOR: f64 = 13.0;
/// Divisor for late predictions (`d >= 0`).
pub const LATE_DIVISOR: f64 = 10.0;

/// PHM score of the errors `d = predicted - true`: late predictions cost more.
pub fn phm_score(ds: &[f64]) -> f64 {
    ds.iter()
        .map(|&d| {
            if d < 0.0 {
                (-d / EARLY_DIVISOR).exp() - 1.0
            } else {
                (d / LATE_DIVISOR).exp() - 1.0
            }
        })
        .sum()
}

pub fn rmse(ds: &[f64]) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Contract("rmse of zero errors".into()));
    }
    Ok((ds.iter().map(|d| d * d).sum::<f64>() / ds.len() as f64).sqrt())
}

/// Anything that maps `[B×F×T]` windows to `B` RUL estimates.
pub trait Predictor {
    fn window(&self) -> usize;
    fn predict_batch(&self, x: &Tensor<f32>) -> Result<Vec<f64>>;
}

impl<S: Scalar> Predictor for RulModel<S> {
    fn window(&self) -> usize {
        self.config().window
    }

    fn predict_batch(&self, x: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(self.predict(&x.cast())?.iter().map(|v| v.as_f64()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit_id: u32,
    pub true_rul: f64,
    pub pred_rul: f64,
    /// `pred_rul - true_rul`.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub records: Vec<UnitRecord>,
    pub rmse: f64,
    pub score: f64,
    pub n: usize,
    /// Predictions raised to zero before scoring.
    pub clamped: usize,
    /// Cap applied to the true RUL, if any.
    pub clip: Option<u32>,
    /// Free-form snapshot of the run configuration.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvaluationReport {
    pub fn from_records(records: Vec<UnitRecord>, clamped: usize, clip: Option<u32>) -> Result<Self> {
        let ds: Vec<f64> = records.iter().map(|r| r.error).collect();
        Ok(EvaluationReport {
            rmse: rmse(&ds)?,
            score: phm_score(&ds),
            n: records.len(),
            records,
            clamped,
            clip,
            config: serde_json::Value::Null,
        })
    }

    /// `unit_id,true_rul,pred_rul,error`, one row per unit.
    pub fn write_predictions<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "unit_id,true_rul,pred_rul,error")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.unit_id, r.true_rul, r.pred_rul, r.error)?;
        }
        Ok(())
    }
}

/// Scores every window of `set` (one per unit for a test set).
pub fn evaluate_windows<P: Predictor + ?Sized>(
    model: &P,
    set: &WindowSet,
    clip: Option<u32>,
) -> Result<EvaluationReport> {
    if set.window != model.window() {
        return Err(Error::Config(format!(
            "model expects windows of {} cycles, data uses {}",
            model.window(),
            set.window
        )));
    }
    let all: Vec<usize> = (0..set.len()).collect();
    let mut records = Vec::with_capacity(set.len());
    let mut clamped = 0;
    for chunk in all.chunks(256) {
        let (x, y) = set.batch(chunk);
        let pred = model.predict_batch(&x)?;
        for ((&w, p), &t) in chunk.iter().zip(pred).zip(y.data()) {
            if !p.is_finite() {
                return Err(Error::NumericInput("prediction"));
            }
            let p = if p < 0.0 {
                clamped += 1;
                0.0
            } else {
                p
            };
            let t = t as f64;
            records.push(UnitRecord {
                unit_id: set.unit_id(w),
                true_rul: t,
                pred_rul: p,
                error: p - t,
            });
        }
    }
    EvaluationReport::from_records(records, clamped, clip)
}

/// Final-window predictions for every test trajectory, normalised with
/// `condition_model`. `truth[i]` belongs to `test[i]` and is capped at `clip`.
pub fn predict_test_set<P: Predictor + ?Sized>(
    model: &P,
    condition_model: &ConditionModel,
    test: &[RawTrajectory],
    truth: &[u32],
    clip: Option<u32>,
) -> Result<EvaluationReport> {
    if truth.len() != test.len() {
        return Err(Error::Integrity(format!(
            "{} truth values for {} test trajectories",
            truth.len(),
            test.len()
        )));
    }
    let series = test.iter().map(|t| condition_model.normalize(t)).collect();
    let set = WindowSet::test(series, truth, model.window(), clip)?;
    evaluate_windows(model, &set, clip)
}
