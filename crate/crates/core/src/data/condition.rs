use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{RawTrajectory, CHANNELS, SETTINGS};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Channels whose std within a condition falls below this are constant there
/// and normalise to 0.
pub const CONSTANT_STD: f64 = 1e-8;

pub type Point = [f64; SETTINGS];

/// Per-channel statistics of the rows assigned to one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub rows: usize,
    /// One entry per channel, settings first.
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

/// Fitted normalisation state: operating-condition centroids in setting space
/// plus per-condition channel mean and std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionModel {
    pub centroids: Vec<Point>,
    pub stats: Vec<ConditionStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    /// Independent seeded runs; the lowest-inertia run is kept.
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 10,
            max_iter: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Point>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
}

fn dist2(a: &Point, b: &Point) -> f64 {
    let mut s = 0.0;
    for i in 0..SETTINGS {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Index of the nearest centroid; the lowest index wins ties.
pub fn nearest(centroids: &[Point], p: &Point) -> usize {
    let mut best = 0;
    let mut best_d = dist2(p, &centroids[0]);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = dist2(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn distinct_count(points: &[Point]) -> usize {
    let mut sorted: Vec<Point> = points.to_vec();
    let key = |a: &Point, b: &Point| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    sorted.sort_by(key);
    sorted.dedup_by(|a, b| key(a, b).is_eq());
    sorted.len()
}

/// D²-weighted seeding: the first centre is a uniform draw, each further
/// centre is a data point drawn with probability proportional to its squared
/// distance from the centres so far. Chosen points are always distinct.
fn seed_centroids<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R) -> Vec<Point> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                pick = Some(i);
                acc += d;
                if acc > target {
                    break;
                }
            }
        }
        let c = points[pick.expect("more distinct points than centroids")];
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Point], mut centroids: Vec<Point>, max_iter: usize) -> KMeans {
    let k = centroids.len();
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![[0.0; SETTINGS]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for d in 0..SETTINGS {
                sums[a][d] += p[d];
            }
        }
        for j in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[j] > 0 {
                for d in 0..SETTINGS {
                    centroids[j][d] = sums[j][d] / counts[j] as f64;
                }
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| dist2(p, &centroids[a]))
        .sum();
    KMeans {
        centroids,
        assignment,
        inertia,
        iterations,
    }
}

/// Lloyd's k-means with D²-weighted seeding and restarts.
pub fn kmeans<R: Rng + ?Sized>(points: &[Point], k: usize, rng: &mut R, opts: &KMeansOptions) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Clustering("k must be at least 1".into()));
    }
    let distinct = distinct_count(points);
    if distinct < k {
        return Err(Error::Clustering(format!(
            "{distinct} distinct setting points cannot form {k} clusters"
        )));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..opts.restarts.max(1) {
        let init = seed_centroids(points, k, rng);
        let run = lloyd(points, init, opts.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn channel_stats(rows: &[&[f64]]) -> ConditionStats {
    let n = rows.len();
    let mut mean = vec![0.0; CHANNELS];
    let mut std = vec![0.0; CHANNELS];
    if n > 0 {
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for r in rows {
            for ((s, m), v) in std.iter_mut().zip(&mean).zip(r.iter()) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / n as f64).sqrt();
        }
    }
    ConditionStats { rows: n, mean, std }
}

/// Clusters every training row's settings into `k` operating conditions and
/// fits per-condition channel statistics. `k = 1` gives global statistics.
pub fn cluster_conditions(trajectories: &[RawTrajectory], k: usize, seed: u64) -> Result<ConditionModel> {
    cluster_conditions_with(trajectories, k, seed, &KMeansOptions::default())
}

pub fn cluster_conditions_with(
    trajectories: &[RawTrajectory],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ConditionModel> {
    let points: Vec<Point> = trajectories
        .iter()
        .flat_map(|t| t.rows.iter().map(|r| r.settings))
        .collect();
    let km = kmeans(&points, k, &mut seed::rng(seed, Stream::Cluster), opts)?;
    let channels: Vec<Vec<f64>> = trajectories
        .iter()
        .flat_map(|t| t.rows.iter().map(|r| r.channels().collect()))
        .collect();
    let stats = (0..k)
        .map(|j| {
            let rows: Vec<&[f64]> = channels
                .iter()
                .zip(&km.assignment)
                .filter(|(_, &a)| a == j)
                .map(|(c, _)| c.as_slice())
                .collect();
            channel_stats(&rows)
        })
        .collect();
    Ok(ConditionModel {
        centroids: km.centroids,
        stats,
    })
}

/// A trajectory after per-condition z-scoring, stored cycle-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrajectory {
    pub unit_id: u32,
    /// Condition index of every cycle.
    pub conditions: Vec<usize>,
    /// `len × CHANNELS` values, one row per cycle.
    pub values: Vec<f64>,
}

impl NormalizedTrajectory {
    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Channels of the cycle at 0-based position `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * CHANNELS..(t + 1) * CHANNELS]
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.chunks_exact(CHANNELS).map(move |r| r[c])
    }
}

impl ConditionModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn assign(&self, settings: &Point) -> usize {
        nearest(&self.centroids, settings)
    }

    pub fn is_constant(&self, condition: usize, channel: usize) -> bool {
        self.stats[condition].std[channel] < CONSTANT_STD
    }

    /// `(x - μ) / σ` per channel under the row's condition; constant channels
    /// become 0.
    pub fn normalize_row(&self, row: &super::Row, out: &mut [f64]) -> usize {
        let j = self.assign(&row.settings);
        let st = &self.stats[j];
        for (c, (slot, x)) in out.iter_mut().zip(row.channels()).enumerate() {
            *slot = if st.std[c] < CONSTANT_STD {
                0.0
            } else {
                (x - st.mean[c]) / st.std[c]
            };
        }
        j
    }

    pub fn normalize(&self, traj: &RawTrajectory) -> NormalizedTrajectory {
        let mut values = vec![0.0; traj.len() * CHANNELS];
        let conditions = traj
            .rows
            .iter()
            .zip(values.chunks_exact_mut(CHANNELS))
            .map(|(r, out)| self.normalize_row(r, out))
            .collect();
        NormalizedTrajectory {
            unit_id: traj.unit_id,
            conditions,
            values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.centroids.is_empty() || self.stats.len() != self.centroids.len() {
            return Err(Error::Integrity(
                "condition model needs one stats block per centroid".into(),
            ));
        }
        for st in &self.stats {
            if st.mean.len() != CHANNELS || st.std.len() != CHANNELS {
                return Err(Error::Integrity(format!(
                    "condition stats must have {CHANNELS} channels"
                )));
            }
            if st.std.iter().any(|s| s.is_nan() || *s < 0.0) || st.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Integrity("condition stats hold invalid values".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ties_go_to_the_lowest_index() {
        let c = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert_eq!(nearest(&c, &[1.0, 0.0, 0.0]), 0);
        assert_eq!(nearest(&c, &[1.5, 0.0, 0.0]), 1);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![[1.0, 2.0, 3.0]; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = kmeans(&pts, 2, &mut rng, &KMeansOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Clustering(_)));
        assert!(kmeans(&pts, 1, &mut rng, &KMeansOptions::default()).is_ok());
        assert!(kmeans(&pts, 0, &mut rng, &KMeansOptions::default()).is_err());
    }

    #[test]
    fn seeding_picks_distinct_points() {
        let mut pts = vec![[0.0, 0.0, 0.0]; 50];
        pts.push([1.0, 0.0, 0.0]);
        pts.push([0.0, 1.0, 0.0]);
        for s in 0..20 {
            let c = seed_centroids(&pts, 3, &mut ChaCha8Rng::seed_from_u64(s));
            assert_eq!(distinct_count(&c), 3);
        }
    }
}
