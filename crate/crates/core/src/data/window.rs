use serde::{Deserialize, Serialize};

use super::{NormalizedTrajectory, CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Piece-wise linear RUL: flat at `r_max` early in life, then `t_total - t`.
pub fn piecewise_rul(t_total: u32, t: u32, r_max: u32) -> Result<u32> {
    if t == 0 || t > t_total {
        return Err(Error::Contract(format!("cycle {t} outside 1..={t_total}")));
    }
    if r_max == 0 {
        return Err(Error::Contract("R_max must be positive".into()));
    }
    Ok(r_max.min(t_total - t))
}

/// Windows a trajectory of `t_total` cycles yields at stride 1.
pub fn window_count(t_total: usize, window: usize) -> usize {
    if window <= t_total {
        t_total - window + 1
    } else {
        1
    }
}

/// How window labels are produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Labels {
    /// Every window, labelled `min(r_max, T_total - t_end)`.
    Train { r_max: u32 },
    /// Only the final window, labelled with the truth RUL, optionally capped.
    Test { truth: u32, clip: Option<u32> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    pub unit_id: u32,
    pub end_cycle: u32,
    pub label: f32,
    /// `F×T`: one row per channel, columns are consecutive cycles.
    pub matrix: Tensor<f32>,
}

/// Writes the `F×T` window ending at 0-based position `end` into `out`
/// (row-major). Positions before the first cycle repeat the first cycle.
pub fn fill_window(traj: &NormalizedTrajectory, end: usize, window: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), CHANNELS * window);
    for j in 0..window {
        let p = (end + 1 + j).saturating_sub(window);
        let row = traj.row(p);
        for c in 0..CHANNELS {
            out[c * window + j] = row[c] as f32;
        }
    }
}

fn entries(traj: &NormalizedTrajectory, window: usize, labels: Labels) -> Result<Vec<(usize, f32)>> {
    if window == 0 {
        return Err(Error::Contract("window length must be at least 1".into()));
    }
    let n = traj.len();
    if n == 0 {
        return Err(Error::Integrity(format!("unit {} has no cycles", traj.unit_id)));
    }
    Ok(match labels {
        Labels::Train { r_max } => {
            let first = window.min(n) - 1;
            (first..n)
                .map(|end| {
                    let rul = piecewise_rul(n as u32, end as u32 + 1, r_max)?;
                    Ok((end, rul as f32))
                })
                .collect::<Result<_>>()?
        }
        Labels::Test { truth, clip } => {
            let label = clip.map_or(truth, |c| truth.min(c));
            vec![(n - 1, label as f32)]
        }
    })
}

/// Stride-1 windows of one normalised trajectory.
pub fn window_split(traj: &NormalizedTrajectory, window: usize, labels: Labels) -> Result<Vec<WindowedSample>> {
    entries(traj, window, labels)?
        .into_iter()
        .map(|(end, label)| {
            let mut data = vec![0.0f32; CHANNELS * window];
            fill_window(traj, end, window, &mut data);
            Ok(WindowedSample {
                unit_id: traj.unit_id,
                end_cycle: end as u32 + 1,
                label,
                matrix: Tensor::new(vec![CHANNELS, window], data)?,
            })
        })
        .collect()
}

/// One window of a [`WindowSet`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRef {
    /// Index into [`WindowSet::series`].
    pub series: usize,
    pub end_cycle: u32,
    pub label: f32,
}

/// Normalised series plus an index of windows over them. Matrices are built
/// on demand, batch by batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub window: usize,
    pub series: Vec<NormalizedTrajectory>,
    pub index: Vec<WindowRef>,
}

impl WindowSet {
    pub fn train(series: Vec<NormalizedTrajectory>, window: usize, r_max: u32) -> Result<Self> {
        Self::build(series, window, |_| Labels::Train { r_max })
    }

    /// One final window per trajectory; `truth[i]` belongs to `series[i]`.
    pub fn test(series: Vec<NormalizedTrajectory>, truth: &[u32], window: usize, clip: Option<u32>) -> Result<Self> {
        if truth.len() != series.len() {
            return Err(Error::Integrity(format!(
                "{} truth values for {} test trajectories",
                truth.len(),
                series.len()
            )));
        }
        Self::build(series, window, |i| Labels::Test { truth: truth[i], clip })
    }

    fn build(series: Vec<NormalizedTrajectory>, window: usize, labels: impl Fn(usize) -> Labels) -> Result<Self> {
        let mut index = Vec::new();
        for (i, traj) in series.iter().enumerate() {
            for (end, label) in entries(traj, window, labels(i))? {
                index.push(WindowRef {
                    series: i,
                    end_cycle: end as u32 + 1,
                    label,
                });
            }
        }
        Ok(WindowSet { window, series, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn unit_id(&self, w: usize) -> u32 {
        self.series[self.index[w].series].unit_id
    }

    /// The selected windows as a new set sharing nothing with `self`; series
    /// not referenced are dropped.
    pub fn subset(&self, windows: &[usize]) -> WindowSet {
        let mut remap = vec![usize::MAX; self.series.len()];
        let mut series = Vec::new();
        let index = windows
            .iter()
            .map(|&w| {
                let r = self.index[w];
                if remap[r.series] == usize::MAX {
                    remap[r.series] = series.len();
                    series.push(self.series[r.series].clone());
                }
                WindowRef {
                    series: remap[r.series],
                    ..r
                }
            })
            .collect();
        WindowSet {
            window: self.window,
            series,
            index,
        }
    }

    pub fn sample(&self, w: usize) -> WindowedSample {
        let r = self.index[w];
        let mut data = vec![0.0f32; CHANNELS * self.window];
        fill_window(&self.series[r.series], r.end_cycle as usize - 1, self.window, &mut data);
        WindowedSample {
            unit_id: self.series[r.series].unit_id,
            end_cycle: r.end_cycle,
            label: r.label,
            matrix: Tensor::new(vec![CHANNELS, self.window], data).expect("window shape"),
        }
    }

    /// `[B×F×T]` inputs and `[B]` labels of the given windows.
    pub fn batch(&self, windows: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let per = CHANNELS * self.window;
        let mut data = vec![0.0f32; windows.len() * per];
        let mut labels = Vec::with_capacity(windows.len());
        for (chunk, &w) in data.chunks_exact_mut(per).zip(windows) {
            let r = self.index[w];
            fill_window(&self.series[r.series], r.end_cycle as usize - 1, self.window, chunk);
            labels.push(r.label);
        }
        (
            Tensor::new(vec![windows.len(), CHANNELS, self.window], data).expect("batch shape"),
            Tensor::new(vec![windows.len()], labels).expect("label shape"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_examples() {
        assert_eq!(piecewise_rul(300, 100, 125).unwrap(), 125);
        assert_eq!(piecewise_rul(300, 250, 125).unwrap(), 50);
        assert_eq!(piecewise_rul(300, 300, 125).unwrap(), 0);
        assert!(matches!(piecewise_rul(300, 301, 125), Err(Error::Contract(_))));
        assert!(piecewise_rul(300, 0, 125).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_count(192, 30), 163);
        assert_eq!(window_count(30, 30), 1);
        assert_eq!(window_count(20, 30), 1);
    }
}
