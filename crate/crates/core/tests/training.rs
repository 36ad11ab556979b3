use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rul_core::data::synthetic::{generate, SyntheticConfig};
use rul_core::data::{cluster_conditions, NormalizedTrajectory, WindowSet, CHANNELS};
use rul_core::nn::{Mode, ModelConfig, RulModel};
use rul_core::tensor::Tape;
use rul_core::train::{
    checkpoint_load, checkpoint_save, epoch_batches, fit, mse_loss, rmse_on, split_units, Checkpoint, TrainConfig,
    MAGIC,
};
use rul_core::Error;

fn tiny(window: usize) -> ModelConfig {
    ModelConfig {
        features: CHANNELS,
        window,
        mode: Mode::FT,
        feature_heads: 2,
        sequence_heads: 2,
        lstm_layers: 2,
        lstm_hidden: 8,
        mlp_hidden: 8,
        dropout: 0.0,
    }
}

fn quick(window: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        patience: 3,
        max_epochs: 4,
        window,
        feature_heads: 2,
        sequence_heads: 2,
        r_max: 125,
        seed: 9,
        ..Default::default()
    }
}

fn synthetic_windows(window: usize, units: usize) -> (WindowSet, rul_core::data::ConditionModel) {
    let data = generate(&SyntheticConfig {
        train_units: units,
        min_life: 40,
        max_life: 60,
        ..Default::default()
    });
    let cm = cluster_conditions(&data.train, 1, 0).unwrap();
    let series = data.train.iter().map(|t| cm.normalize(t)).collect();
    (WindowSet::train(series, window, 125).unwrap(), cm)
}

/// Eleven one-window units whose target is a linear function of the inputs.
fn linear_target_set(window: usize) -> WindowSet {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let series: Vec<NormalizedTrajectory> = (0..11)
        .map(|u| NormalizedTrajectory {
            unit_id: u + 1,
            conditions: vec![0; window],
            values: (0..window * CHANNELS)
                .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
                .collect(),
        })
        .collect();
    let mut set = WindowSet::train(series, window, 125).unwrap();
    for i in 0..set.len() {
        let s = set.sample(i);
        let mean = s.matrix.data().iter().map(|&v| v as f64).sum::<f64>() / s.matrix.len() as f64;
        set.index[i].label = (3.0 + 20.0 * mean) as f32;
    }
    set
}

#[test]
fn same_seed_gives_identical_parameters() {
    let (set, _) = synthetic_windows(8, 6);
    let run = || {
        let mut model = RulModel::<f32>::new(
            ModelConfig {
                dropout: 0.3,
                ..tiny(8)
            },
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let log = fit(&mut model, &set, &quick(8)).unwrap();
        (model, log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    for (p, q) in a.params().iter().zip(b.params()) {
        let bits = |t: &rul_core::tensor::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.value), bits(&q.value), "{}", p.name);
    }
}

#[test]
fn loss_strictly_decreases_on_a_linear_target() {
    let set = linear_target_set(6);
    let mut model = RulModel::<f32>::new(tiny(6), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        max_epochs: 5,
        patience: 10,
        window: 6,
        ..Default::default()
    };
    let log = fit(&mut model, &set, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 5);
    let losses: Vec<f64> = log.epochs.iter().map(|e| e.train_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn patience_one_with_a_frozen_metric_stops_after_two_evaluations() {
    let (set, _) = synthetic_windows(8, 6);
    let mut model = RulModel::<f32>::new(tiny(8), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let before = model.clone();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        patience: 1,
        max_epochs: 50,
        ..quick(8)
    };
    let log = fit(&mut model, &set, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 2);
    assert!(log.stopped_early);
    assert_eq!(log.epochs[0].val_rmse, log.epochs[1].val_rmse);
    assert_eq!(model, before);
}

#[test]
fn the_best_validation_parameters_are_restored() {
    let (set, _) = synthetic_windows(8, 10);
    let mut model = RulModel::<f32>::new(tiny(8), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 5e-2,
        max_epochs: 8,
        patience: 8,
        ..quick(8)
    };
    let log = fit(&mut model, &set, &cfg).unwrap();
    let best = log.epochs.iter().map(|e| e.val_rmse).fold(f64::INFINITY, f64::min);
    assert_eq!(log.best_val_rmse, best);
    assert_eq!(log.epochs[log.best_epoch - 1].val_rmse, best);
    let val: BTreeSet<u32> = log.val_units.iter().copied().collect();
    let val_windows: Vec<usize> = (0..set.len()).filter(|&w| val.contains(&set.unit_id(w))).collect();
    let now = rmse_on(&model, &set, &val_windows, 16).unwrap();
    assert_eq!(now, best);
}

#[test]
fn units_never_straddle_the_split() {
    let (set, _) = synthetic_windows(8, 12);
    let mut model = RulModel::<f32>::new(tiny(8), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let log = fit(
        &mut model,
        &set,
        &TrainConfig {
            max_epochs: 1,
            ..quick(8)
        },
    )
    .unwrap();
    let train: BTreeSet<u32> = log.train_units.iter().copied().collect();
    let val: BTreeSet<u32> = log.val_units.iter().copied().collect();
    assert!(train.is_disjoint(&val));
    assert_eq!(train.len() + val.len(), 12);
    assert_eq!(val.len(), 1);
}

proptest! {
    #[test]
    fn unit_split_is_a_partition(units in 2usize..300, frac in 0.01f64..0.99, seed in 0u64..1000) {
        let (train, val) = split_units(units, frac, seed).unwrap();
        prop_assert!(!train.is_empty() && !val.is_empty());
        let all: BTreeSet<usize> = train.iter().chain(&val).copied().collect();
        prop_assert_eq!(all.len(), units);
        prop_assert_eq!(train.len() + val.len(), units);
        prop_assert_eq!(split_units(units, frac, seed).unwrap(), (train, val));
    }

    #[test]
    fn an_epoch_touches_every_window_once(n in 1usize..500, batch in 1usize..200, seed in 0u64..100) {
        let windows: Vec<usize> = (0..n).map(|i| i * 3).collect();
        let batches = epoch_batches(&windows, batch, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(batches.len(), n.div_ceil(batch));
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, windows);
    }
}

#[test]
fn batch_loss_is_the_mean_of_per_sample_errors() {
    let (set, _) = synthetic_windows(8, 4);
    let model = RulModel::<f64>::new(tiny(8), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let picks: Vec<usize> = (0..set.len()).step_by(7).collect();
    let (x, y) = set.batch(&picks);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let xv = tape.constant(x.cast());
    let yv = tape.constant(y.cast());
    let pass = model.forward(&mut tape, &vars, xv, None).unwrap();
    let loss = mse_loss(&mut tape, pass.prediction, yv).unwrap();
    let oracle = picks
        .iter()
        .map(|&w| {
            let s = set.sample(w);
            let p = model.forward_sample(&s.matrix.cast(), None).unwrap();
            (p - s.label as f64).powi(2)
        })
        .sum::<f64>()
        / picks.len() as f64;
    assert!((tape.value(loss).data()[0] - oracle).abs() <= 1e-12 * oracle.max(1.0));
}

#[test]
fn empty_or_mismatched_training_sets_are_rejected() {
    let (set, _) = synthetic_windows(8, 4);
    let mut model = RulModel::<f32>::new(tiny(10), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert!(matches!(fit(&mut model, &set, &quick(8)), Err(Error::Dimension { .. })));
    let empty = WindowSet {
        window: 10,
        series: Vec::new(),
        index: Vec::new(),
    };
    assert!(matches!(fit(&mut model, &empty, &quick(10)), Err(Error::Contract(_))));
}

// ---- checkpoints -------------------------------------------------------------------

fn bundle() -> (Checkpoint, WindowSet) {
    let (set, cm) = synthetic_windows(30, 3);
    let model = RulModel::<f32>::new(ModelConfig::new(CHANNELS, 30), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    (
        Checkpoint {
            model,
            train: TrainConfig::default(),
            condition_model: cm,
        },
        set,
    )
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let (ckpt, set) = bundle();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint_save(&ckpt, &path).unwrap();
    let back = checkpoint_load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.train.r_max, 125);
    assert_eq!(back.model.config().window, 30);
    let (x, _) = set.batch(&(0..20).collect::<Vec<_>>());
    let a: Vec<u32> = ckpt.model.predict(&x).unwrap().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = back.model.predict(&x).unwrap().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
    assert!(back.ensure_window(30).is_ok());
    assert!(matches!(back.ensure_window(40), Err(Error::Config(_))));
}

#[test]
fn damaged_checkpoints_are_refused() {
    let (ckpt, _) = bundle();
    let bytes = ckpt.to_bytes().unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    for cut in [0, 7, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))),
            "cut {cut}"
        );
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 3] ^= 0x10;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));
    let mut future = bytes.clone();
    future[8] = 2;
    assert!(matches!(Checkpoint::from_bytes(&future), Err(Error::Checkpoint(_))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.ckpt");
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(checkpoint_load(&path), Err(Error::Checkpoint(_))));
}
