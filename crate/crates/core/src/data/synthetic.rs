//! Synthetic run-to-failure fleets in the C-MAPSS layout.
//!
//! Each cycle runs in one of up to six operating conditions (drawn per
//! cycle when there are several). Every sensor reads a condition-dependent
//! baseline, plus a gain times an exponential wear curve, plus Gaussian noise.
//! Six sensors are flat within a condition, as in the real data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{RawTrajectory, Row, SENSORS, SETTINGS};

/// Nominal (altitude, Mach, throttle) of the six operating conditions.
pub const CONDITIONS: [[f64; SETTINGS]; 6] = [
    [0.0, 0.0, 100.0],
    [10.0, 0.25, 100.0],
    [20.0, 0.70, 100.0],
    [25.0, 0.62, 60.0],
    [35.0, 0.84, 100.0],
    [42.0, 0.84, 100.0],
];

/// Sensors (0-based) that carry no wear signal and no noise.
pub const FLAT_SENSORS: [usize; 6] = [0, 4, 9, 15, 17, 18];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub train_units: usize,
    pub test_units: usize,
    /// Number of operating conditions in use, 1 to 6.
    pub conditions: usize,
    pub min_life: u32,
    pub max_life: u32,
    /// Multiplier on every sensor's noise level.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_units: 20,
            test_units: 10,
            conditions: 1,
            min_life: 120,
            max_life: 240,
            noise: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<RawTrajectory>,
    pub test: Vec<RawTrajectory>,
    /// RUL after the last cycle of each test trajectory.
    pub truth: Vec<u32>,
}

struct SensorModel {
    base: f64,
    per_condition: [f64; 6],
    gain: f64,
    noise: f64,
}

fn sensor_models(rng: &mut ChaCha8Rng) -> Vec<SensorModel> {
    (0..SENSORS)
        .map(|s| {
            let flat = FLAT_SENSORS.contains(&s);
            let base = rng.random_range(10.0..1000.0);
            let mut per_condition = [0.0; 6];
            for c in per_condition.iter_mut() {
                *c = rng.random_range(-0.3..0.3) * base;
            }
            let gain = if flat {
                0.0
            } else {
                rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }
            };
            let noise = if flat { 0.0 } else { rng.random_range(0.1..0.3) };
            SensorModel {
                base,
                per_condition,
                gain,
                noise,
            }
        })
        .collect()
}

fn wear(t: u32, life: u32) -> f64 {
    let x = t as f64 / life as f64;
    (3.0 * x).exp_m1() / 3.0f64.exp_m1()
}

fn trajectory(
    unit_id: u32,
    life: u32,
    cycles: u32,
    cfg: &SyntheticConfig,
    sensors: &[SensorModel],
    rng: &mut ChaCha8Rng,
) -> RawTrajectory {
    let unit_norm = Normal::new(0.0, 1.0).expect("unit normal");
    let offsets: Vec<f64> = sensors.iter().map(|s| 0.2 * s.noise * unit_norm.sample(rng)).collect();
    let rows = (1..=cycles)
        .map(|t| {
            let c = if cfg.conditions > 1 {
                rng.random_range(0..cfg.conditions)
            } else {
                0
            };
            let nominal = CONDITIONS[c];
            let settings = [
                nominal[0] + rng.random_range(-0.003..0.003),
                nominal[1] + rng.random_range(-0.0003..0.0003),
                nominal[2],
            ];
            let w = wear(t, life);
            let mut values = [0.0; SENSORS];
            for (i, (v, s)) in values.iter_mut().zip(sensors).enumerate() {
                let noise = cfg.noise * s.noise * unit_norm.sample(rng);
                *v = s.base + s.per_condition[c] + s.gain * 4.0 * w + offsets[i] + noise;
            }
            Row {
                cycle: t,
                settings,
                sensors: values,
            }
        })
        .collect();
    RawTrajectory { unit_id, rows }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticData {
    assert!((1..=6).contains(&cfg.conditions), "1 to 6 conditions");
    assert!(cfg.min_life >= 2 && cfg.min_life <= cfg.max_life);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sensors = sensor_models(&mut rng);
    let life = |rng: &mut ChaCha8Rng| rng.random_range(cfg.min_life..=cfg.max_life);

    let train = (0..cfg.train_units)
        .map(|u| {
            let l = life(&mut rng);
            trajectory(u as u32 + 1, l, l, cfg, &sensors, &mut rng)
        })
        .collect();
    let mut test = Vec::new();
    let mut truth = Vec::new();
    for u in 0..cfg.test_units {
        let l = life(&mut rng);
        let cut = rng.random_range((l / 4).max(1)..l);
        test.push(trajectory(u as u32 + 1, l, cut, cfg, &sensors, &mut rng));
        truth.push(l - cut);
    }
    SyntheticData { train, test, truth }
}
