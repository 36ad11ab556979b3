use std::io::Write;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::data::{fill_window, ConditionModel, RawTrajectory, CHANNELS, SETTINGS};
use crate::error::{Error, Result};
use crate::nn::RulModel;
use crate::tensor::{Scalar, Tensor};

/// `setting_1..3` then `sensor_1..21`, in input-row order.
pub fn channel_name(c: usize) -> String {
    if c < SETTINGS {
        format!("setting_{}", c + 1)
    } else {
        format!("sensor_{}", c - SETTINGS + 1)
    }
}

/// Attention of one window, the one ending at `cycle`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleAttention {
    pub cycle: u32,
    pub rul: f64,
    /// Per head, `F×F` rows.
    pub feature: Vec<Vec<Vec<f64>>>,
    /// Head average of `feature`; empty without feature attention.
    pub feature_mean: Vec<Vec<f64>>,
    /// Column sums of `feature_mean`: total attention each channel receives.
    pub column_sums: Vec<f64>,
    /// Per head, `T×T` rows.
    pub sequence: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub unit_id: u32,
    pub window: usize,
    pub channels: Vec<String>,
    pub cycles: Vec<CycleAttention>,
}

fn rows<S: Scalar>(t: &Tensor<S>) -> Vec<Vec<f64>> {
    let n = t.shape()[1];
    t.data()
        .chunks(n)
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect()
}

/// Runs the window ending at every cycle in `cycles` (default: the whole
/// trajectory) and keeps the attention weights.
pub fn export_attention<S: Scalar>(
    model: &RulModel<S>,
    condition_model: &ConditionModel,
    traj: &RawTrajectory,
    cycles: Option<RangeInclusive<u32>>,
) -> Result<AttentionExport> {
    if model.feature_attention().is_none() && model.sequence_attention().is_none() {
        return Err(Error::Capability(format!(
            "model mode {} has no attention to export",
            model.config().mode
        )));
    }
    let len = traj.rows.len() as u32;
    let range = cycles.unwrap_or(1..=len);
    if range.is_empty() || *range.start() < 1 || *range.end() > len {
        return Err(Error::Lookup(format!(
            "cycles {}..={} outside unit {} (1..={len})",
            range.start(),
            range.end(),
            traj.unit_id
        )));
    }
    let series = condition_model.normalize(traj);
    let window = model.config().window;
    let mut buf = vec![0.0f32; CHANNELS * window];
    let mut out = Vec::with_capacity(range.clone().count());
    for cycle in range {
        fill_window(&series, cycle as usize - 1, window, &mut buf);
        let sample = Tensor::new(vec![CHANNELS, window], buf.iter().map(|&v| S::of(v as f64)).collect())?;
        let inf = model.infer(&sample)?;
        let feature: Vec<Vec<Vec<f64>>> = inf.attention.feature.iter().map(rows).collect();
        let (feature_mean, column_sums) = if feature.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let h = feature.len() as f64;
            let mean: Vec<Vec<f64>> = (0..CHANNELS)
                .map(|i| {
                    (0..CHANNELS)
                        .map(|j| feature.iter().map(|m| m[i][j]).sum::<f64>() / h)
                        .collect()
                })
                .collect();
            let sums = (0..CHANNELS).map(|j| mean.iter().map(|r| r[j]).sum()).collect();
            (mean, sums)
        };
        out.push(CycleAttention {
            cycle,
            rul: inf.rul.as_f64(),
            feature,
            feature_mean,
            column_sums,
            sequence: inf.attention.sequence.iter().map(rows).collect(),
        });
    }
    Ok(AttentionExport {
        unit_id: traj.unit_id,
        window,
        channels: (0..CHANNELS).map(channel_name).collect(),
        cycles: out,
    })
}

/// `cycle,head,row_sensor,col_sensor,weight`; `head` is a head index or `mean`.
pub fn write_attention_feature<W: Write>(export: &AttentionExport, mut w: W) -> Result<()> {
    writeln!(w, "cycle,head,row_sensor,col_sensor,weight")?;
    let names = &export.channels;
    for c in &export.cycles {
        let heads = c.feature.iter().enumerate().map(|(h, m)| (h.to_string(), m));
        let mean = std::iter::once(("mean".to_string(), &c.feature_mean)).filter(|(_, m)| !m.is_empty());
        for (head, m) in heads.chain(mean) {
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    writeln!(w, "{},{head},{},{},{v}", c.cycle, names[i], names[j])?;
                }
            }
        }
    }
    Ok(())
}

/// `cycle,sensor,weight_sum`, one row per (cycle, channel).
pub fn write_cycle_sums<W: Write>(export: &AttentionExport, mut w: W) -> Result<()> {
    writeln!(w, "cycle,sensor,weight_sum")?;
    for c in &export.cycles {
        for (j, v) in c.column_sums.iter().enumerate() {
            writeln!(w, "{},{},{v}", c.cycle, export.channels[j])?;
        }
    }
    Ok(())
}
