//! The load → normalise → window → fit → score chain shared by the commands.

use std::path::Path;

use rul_core::data::{cluster_conditions, load_trajectories, load_truth, ConditionModel, RawTrajectory, WindowSet};
use rul_core::eval::{predict_test_set, EvaluationReport};
use rul_core::nn::RulModel;
use rul_core::seed::{self, Stream};
use rul_core::train::{fit_with, Checkpoint, EpochRecord, TrainingLog};
use rul_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::manifest::FileDigest;

/// Whether a command reads the test split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestSplit {
    Skip,
    IfPresent,
    Require,
}

#[derive(Clone, Debug)]
pub struct TestData {
    pub trajectories: Vec<RawTrajectory>,
    pub truth: Vec<u32>,
    pub inputs: Vec<FileDigest>,
}

#[derive(Clone, Debug)]
pub struct RawData {
    pub train: Vec<RawTrajectory>,
    pub test: Option<TestData>,
    pub inputs: Vec<FileDigest>,
}

fn must_exist(path: &Path) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Lookup(format!("{}: no such file", path.display())))
    }
}

/// The test split and its truth; both files must exist.
pub fn load_test(cfg: &ExperimentConfig) -> Result<TestData, Error> {
    let files = cfg.data_files_lenient();
    let missing: Vec<String> = [&files.test, &files.truth]
        .into_iter()
        .filter_map(|p| match p {
            Some(p) if p.is_file() => None,
            Some(p) => Some(p.display().to_string()),
            None => Some("(not configured)".into()),
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Integrity(format!(
            "evaluation needs test and truth files; missing: {}",
            missing.join(", ")
        )));
    }
    let (t, r) = (files.test.expect("checked"), files.truth.expect("checked"));
    let trajectories = load_trajectories(&t)?;
    let truth = load_truth(&r, trajectories.len())?;
    Ok(TestData {
        trajectories,
        truth,
        inputs: vec![FileDigest::of("test", &t)?, FileDigest::of("truth", &r)?],
    })
}

/// Checks every referenced file up front, then parses them.
pub fn load_raw(cfg: &ExperimentConfig, split: TestSplit) -> Result<RawData, Error> {
    let files = cfg.data_files()?;
    must_exist(&files.train)?;
    let present = files.test.as_ref().is_some_and(|p| p.is_file()) && files.truth.as_ref().is_some_and(|p| p.is_file());
    let test = match split {
        TestSplit::Require => Some(load_test(cfg)?),
        TestSplit::IfPresent if present => Some(load_test(cfg)?),
        _ => None,
    };
    let train = load_trajectories(&files.train)?;
    if train.is_empty() {
        return Err(Error::Integrity(format!("{}: no trajectories", files.train.display())));
    }
    Ok(RawData {
        train,
        test,
        inputs: vec![FileDigest::of("train", &files.train)?],
    })
}

/// Fits the condition model on the training split and windows it.
pub fn prepare(
    cfg: &ExperimentConfig,
    train: &[RawTrajectory],
    seed: u64,
) -> Result<(ConditionModel, WindowSet), Error> {
    let cm = cluster_conditions(train, cfg.conditions, seed)?;
    let series = train.iter().map(|t| cm.normalize(t)).collect();
    let set = WindowSet::train(series, cfg.window, cfg.r_max)?;
    Ok((cm, set))
}

/// Test metrics with and without the truth cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub rmse: f64,
    pub score: f64,
    pub clamped: usize,
    pub clip: Option<u32>,
    pub rmse_unclipped: f64,
    pub score_unclipped: f64,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics are plain data") + "\n"
    }
}

pub fn evaluate(
    ckpt: &Checkpoint,
    test: &[RawTrajectory],
    truth: &[u32],
    clip_test: bool,
) -> Result<(EvaluationReport, Metrics), Error> {
    let clip = clip_test.then_some(ckpt.train.r_max);
    let report = predict_test_set(&ckpt.model, &ckpt.condition_model, test, truth, clip)?;
    let unclipped = if clip.is_some() {
        predict_test_set(&ckpt.model, &ckpt.condition_model, test, truth, None)?
    } else {
        report.clone()
    };
    let metrics = Metrics {
        n: report.n,
        rmse: report.rmse,
        score: report.score,
        clamped: report.clamped,
        clip,
        rmse_unclipped: unclipped.rmse,
        score_unclipped: unclipped.score,
    };
    Ok((report, metrics))
}

pub struct RunOutput {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
}

/// Initialises from the `Init` stream of `seed` and fits.
pub fn train(
    cfg: &ExperimentConfig,
    cm: ConditionModel,
    set: &WindowSet,
    seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunOutput, Error> {
    cfg.validate()?;
    let mut model = RulModel::<f32>::new(cfg.model_config(), &mut seed::rng(seed, Stream::Init))?;
    let tcfg = cfg.train_config(seed);
    let log = fit_with(&mut model, set, &tcfg, on_epoch)?;
    Ok(RunOutput {
        checkpoint: Checkpoint {
            model,
            train: tcfg,
            condition_model: cm,
        },
        log,
    })
}

/// Whole experiment in memory: prepare, train, score the test split.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    raw: &RawData,
    seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(RunOutput, Option<Metrics>), Error> {
    cfg.validate()?;
    let (cm, set) = prepare(cfg, &raw.train, seed)?;
    let out = train(cfg, cm, &set, seed, on_epoch)?;
    let metrics = match &raw.test {
        Some(t) => Some(evaluate(&out.checkpoint, &t.trajectories, &t.truth, cfg.clip_test)?.1),
        None => None,
    };
    Ok((out, metrics))
}

pub fn log_csv(log: &TrainingLog) -> String {
    let mut s = String::from("epoch,train_loss,val_rmse,improved\n");
    for e in &log.epochs {
        s += &format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_rmse, e.improved);
    }
    s
}
