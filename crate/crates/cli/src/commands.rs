use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rul_core::data::artifact::{read_dataset, write_condition_model, write_dataset};
use rul_core::data::{Split, WindowSet, WindowedDataset};
use rul_core::eval::{evaluate_windows, export_attention, write_attention_feature, write_cycle_sums};
use rul_core::train::{checkpoint_load, checkpoint_save, Checkpoint, TrainingLog};
use rul_core::Error;
use serde::Serialize;

use crate::config::{ExperimentConfig, Overrides};
use crate::manifest::{FileDigest, Manifest};
use crate::pipeline::{self, Metrics, TestData, TestSplit};
use crate::sweep::{self, SweepParam};
use crate::CliError;

pub const CHECKPOINT: &str = "model.ckpt";
pub const CONDITION_MODEL: &str = "condition_model.json";
pub const TRAIN_WINDOWS: &str = "train_windows.json";
pub const TEST_WINDOWS: &str = "test_windows.json";
pub const METRICS: &str = "metrics.json";
pub const PREDICTIONS: &str = "predictions.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "rul", version, about = "Remaining-useful-life estimation on C-MAPSS data")]
pub struct Cli {
    /// TOML config, or a run manifest (`.json`) to reproduce.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster conditions, normalise and window; write the artifacts.
    Preprocess,
    /// Train a model and write a checkpoint, the epoch log and a manifest.
    Train {
        /// Score the test split after training.
        #[arg(long)]
        evaluate: bool,
        /// Directory written by `preprocess` instead of raw files.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Export attention weights for one unit.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        unit: u32,
        /// `FIRST:LAST`, inclusive; default every cycle.
        #[arg(long, value_parser = parse_cycles)]
        cycles: Option<(u32, u32)>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train and score every (value, seed) pair of one parameter.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Seeds per value, counting up from the first configured seed.
        #[arg(long)]
        repetitions: Option<usize>,
        /// Concurrent child processes.
        #[arg(long)]
        parallel: Option<usize>,
    },
}

fn parse_cycles(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or("expected FIRST:LAST")?;
    let a = a.trim().parse::<u32>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<u32>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

/// Parses `args`, runs the command, returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn resolve(cli: &Cli) -> Result<(ExperimentConfig, Option<Manifest>), CliError> {
    let (mut cfg, manifest) = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => (ExperimentConfig::default(), None),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok((cfg, manifest))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let (cfg, manifest) = resolve(cli)?;
    if let Some(m) = &manifest {
        m.verify_inputs()?;
    }
    let out = cfg.out.clone();
    match &cli.command {
        Command::Preprocess => preprocess(&cfg, &out),
        Command::Train { evaluate, artifacts } => train(&cfg, &out, *evaluate, artifacts.as_deref()),
        Command::Evaluate { checkpoint, artifacts } => evaluate(&cfg, &out, checkpoint, artifacts.as_deref()),
        Command::Explain {
            checkpoint,
            unit,
            cycles,
            split,
        } => explain(&cfg, &out, checkpoint, *unit, *cycles, *split),
        Command::Sweep {
            param,
            values,
            repetitions,
            parallel,
        } => sweep::run(&cfg, &out, *param, values, *repetitions, *parallel),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::Json)? + "\n";
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Lookup(format!("{}: {e}", path.display())).into())
}

#[derive(Serialize)]
struct ConditionSummary {
    condition: usize,
    rows: usize,
    centroid: Vec<f64>,
}

#[derive(Serialize)]
struct PreprocessSummary {
    conditions: usize,
    window: usize,
    r_max: u32,
    train_units: usize,
    train_samples: usize,
    test_units: Option<usize>,
    test_samples: Option<usize>,
    per_condition: Vec<ConditionSummary>,
}

fn preprocess(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let raw = pipeline::load_raw(cfg, TestSplit::IfPresent)?;
    let seed = cfg.seed();
    let (cm, train_set) = pipeline::prepare(cfg, &raw.train, seed)?;
    fs::create_dir_all(out)?;
    let mut w = create(&out.join(CONDITION_MODEL))?;
    write_condition_model(&mut w, &cm)?;
    w.flush()?;
    let train_ds = WindowedDataset {
        split: Split::Train,
        r_max: cfg.r_max,
        clip: None,
        truth: None,
        condition_model: cm.clone(),
        windows: train_set,
    };
    let mut w = create(&out.join(TRAIN_WINDOWS))?;
    write_dataset(&mut w, &train_ds)?;
    w.flush()?;
    let mut test_counts = None;
    if let Some(t) = &raw.test {
        let series = t.trajectories.iter().map(|t| cm.normalize(t)).collect();
        let windows = WindowSet::test(series, &t.truth, cfg.window, None)?;
        test_counts = Some((t.trajectories.len(), windows.len()));
        let ds = WindowedDataset {
            split: Split::Test,
            r_max: cfg.r_max,
            clip: None,
            truth: Some(t.truth.clone()),
            condition_model: cm.clone(),
            windows,
        };
        let mut w = create(&out.join(TEST_WINDOWS))?;
        write_dataset(&mut w, &ds)?;
        w.flush()?;
    }
    let summary = PreprocessSummary {
        conditions: cm.k(),
        window: cfg.window,
        r_max: cfg.r_max,
        train_units: raw.train.len(),
        train_samples: train_ds.windows.len(),
        test_units: test_counts.map(|c| c.0),
        test_samples: test_counts.map(|c| c.1),
        per_condition: cm
            .stats
            .iter()
            .zip(&cm.centroids)
            .enumerate()
            .map(|(i, (s, c))| ConditionSummary {
                condition: i,
                rows: s.rows,
                centroid: c.to_vec(),
            })
            .collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{} train units, {} train windows, {} conditions",
        summary.train_units, summary.train_samples, summary.conditions
    );
    if let Some((u, s)) = test_counts {
        println!("{u} test units, {s} test windows");
    }
    let mut manifest = Manifest::new("preprocess", seed, cfg);
    manifest.inputs = raw.inputs;
    if let Some(t) = &raw.test {
        manifest.inputs.extend(t.inputs.iter().cloned());
    }
    for (role, name) in [("condition_model", CONDITION_MODEL), ("train_windows", TRAIN_WINDOWS)] {
        manifest.outputs.push(FileDigest::of(role, &out.join(name))?);
    }
    if test_counts.is_some() {
        manifest
            .outputs
            .push(FileDigest::of("test_windows", &out.join(TEST_WINDOWS))?);
    }
    fs::write(out.join(MANIFEST), manifest.to_json())?;
    Ok(())
}

fn load_artifact(path: &Path) -> Result<WindowedDataset, CliError> {
    read_dataset(open(path)?).map_err(|e| match e {
        Error::Json(j) => Error::Integrity(format!("{}: {j}", path.display())).into(),
        other => other.into(),
    })
}

/// Outputs of one training run, written into `out`.
pub fn train_into(
    cfg: &ExperimentConfig,
    out: &Path,
    seed: u64,
    train: pipeline::RunOutput,
    test: Option<&TestData>,
    inputs: Vec<FileDigest>,
) -> Result<(TrainingLog, Option<Metrics>), CliError> {
    fs::create_dir_all(out)?;
    let pipeline::RunOutput { checkpoint, log } = train;
    checkpoint_save(&checkpoint, &out.join(CHECKPOINT))?;
    fs::write(out.join("training_log.csv"), pipeline::log_csv(&log))?;
    write_json(&out.join("training_log.json"), &log)?;
    let mut manifest = Manifest::new("train", seed, cfg);
    manifest.inputs = inputs;
    manifest
        .outputs
        .push(FileDigest::of("checkpoint", &out.join(CHECKPOINT))?);
    manifest
        .outputs
        .push(FileDigest::of("training_log", &out.join("training_log.csv"))?);
    let mut metrics = None;
    if let Some(t) = test {
        let (report, m) = pipeline::evaluate(&checkpoint, &t.trajectories, &t.truth, cfg.clip_test)?;
        write_report(out, &report, &m)?;
        manifest
            .outputs
            .push(FileDigest::of("predictions", &out.join(PREDICTIONS))?);
        manifest.outputs.push(FileDigest::of("metrics", &out.join(METRICS))?);
        metrics = Some(m);
    }
    fs::write(out.join(MANIFEST), manifest.to_json())?;
    Ok((log, metrics))
}

fn write_report(out: &Path, report: &rul_core::eval::EvaluationReport, m: &Metrics) -> Result<(), CliError> {
    let mut w = create(&out.join(PREDICTIONS))?;
    report.write_predictions(&mut w)?;
    w.flush()?;
    fs::write(out.join(METRICS), m.to_json())?;
    println!(
        "n {}  rmse {:.4}  score {:.2}  clamped {}",
        m.n, m.rmse, m.score, m.clamped
    );
    Ok(())
}

fn progress(e: &rul_core::train::EpochRecord) {
    eprintln!(
        "epoch {:>4}  train_mse {:>10.4}  val_rmse {:>8.4}{}",
        e.epoch,
        e.train_loss,
        e.val_rmse,
        if e.improved { "  *" } else { "" }
    );
}

fn train(cfg: &ExperimentConfig, out: &Path, evaluate: bool, artifacts: Option<&Path>) -> Result<(), CliError> {
    let seed = cfg.seed();
    let test = if evaluate {
        Some(pipeline::load_test(cfg)?)
    } else {
        None
    };
    let (cm, set, mut inputs) = match artifacts {
        Some(dir) => {
            let path = dir.join(TRAIN_WINDOWS);
            let ds = load_artifact(&path)?;
            if ds.split != Split::Train {
                return Err(Error::Integrity(format!("{}: not a training split", path.display())).into());
            }
            if ds.windows.window != cfg.window || ds.r_max != cfg.r_max {
                return Err(Error::Config(format!(
                    "artifacts use window {} and r-max {}, config asks for {} and {}",
                    ds.windows.window, ds.r_max, cfg.window, cfg.r_max
                ))
                .into());
            }
            (
                ds.condition_model,
                ds.windows,
                vec![FileDigest::of("train_windows", &path)?],
            )
        }
        None => {
            let raw = pipeline::load_raw(cfg, TestSplit::Skip)?;
            let (cm, set) = pipeline::prepare(cfg, &raw.train, seed)?;
            (cm, set, raw.inputs)
        }
    };
    if let Some(t) = &test {
        inputs.extend(t.inputs.iter().cloned());
    }
    let run = pipeline::train(cfg, cm, &set, seed, progress)?;
    let (log, _) = train_into(cfg, out, seed, run, test.as_ref(), inputs)?;
    println!(
        "best epoch {} of {}  val_rmse {:.4}{}",
        log.best_epoch,
        log.epochs.len(),
        log.best_val_rmse,
        if log.stopped_early { "  (early stop)" } else { "" }
    );
    Ok(())
}

fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<Checkpoint, CliError> {
    let ckpt = checkpoint_load(path)?;
    ckpt.ensure_window(cfg.window)?;
    Ok(ckpt)
}

fn evaluate(cfg: &ExperimentConfig, out: &Path, checkpoint: &Path, artifacts: Option<&Path>) -> Result<(), CliError> {
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    fs::create_dir_all(out)?;
    let clip = cfg.clip_test.then_some(ckpt.train.r_max);
    let (report, metrics, inputs) = match artifacts {
        Some(dir) => {
            let path = dir.join(TEST_WINDOWS);
            let ds = load_artifact(&path)?;
            let truth = match (ds.split, &ds.truth) {
                (Split::Test, Some(t)) => t.clone(),
                _ => return Err(Error::Integrity(format!("{}: not a test split", path.display())).into()),
            };
            if ds.condition_model != ckpt.condition_model {
                return Err(Error::Integrity(format!(
                    "{} was normalised with a different condition model than the checkpoint",
                    path.display()
                ))
                .into());
            }
            let series = ds.windows.series;
            let clipped = WindowSet::test(series.clone(), &truth, ckpt.model.config().window, clip)?;
            let raw = WindowSet::test(series, &truth, ckpt.model.config().window, None)?;
            let report = evaluate_windows(&ckpt.model, &clipped, clip)?;
            let unclipped = evaluate_windows(&ckpt.model, &raw, None)?;
            let m = Metrics {
                n: report.n,
                rmse: report.rmse,
                score: report.score,
                clamped: report.clamped,
                clip,
                rmse_unclipped: unclipped.rmse,
                score_unclipped: unclipped.score,
            };
            (report, m, vec![FileDigest::of("test_windows", &path)?])
        }
        None => {
            let t = pipeline::load_test(cfg)?;
            let (report, m) = pipeline::evaluate(&ckpt, &t.trajectories, &t.truth, cfg.clip_test)?;
            (report, m, t.inputs)
        }
    };
    write_report(out, &report, &metrics)?;
    let mut manifest = Manifest::new("evaluate", ckpt.train.seed, cfg);
    manifest.inputs = inputs;
    manifest.inputs.push(FileDigest::of("checkpoint", checkpoint)?);
    manifest
        .outputs
        .push(FileDigest::of("predictions", &out.join(PREDICTIONS))?);
    manifest.outputs.push(FileDigest::of("metrics", &out.join(METRICS))?);
    fs::write(out.join(MANIFEST), manifest.to_json())?;
    Ok(())
}

fn explain(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: &Path,
    unit: u32,
    cycles: Option<(u32, u32)>,
    split: SplitArg,
) -> Result<(), CliError> {
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    if ckpt.model.feature_attention().is_none() && ckpt.model.sequence_attention().is_none() {
        return Err(Error::Capability(format!("mode {} checkpoint has no attention", ckpt.model.config().mode)).into());
    }
    let (pool, which) = match split {
        SplitArg::Train => (pipeline::load_raw(cfg, TestSplit::Skip)?.train, "train"),
        SplitArg::Test => {
            let files = cfg.data_files()?;
            let path = files
                .test
                .ok_or_else(|| Error::Config("explain on the test split needs test-file or dataset".into()))?;
            (rul_core::data::load_trajectories(&path)?, "test")
        }
    };
    let traj = pool
        .iter()
        .find(|t| t.unit_id == unit)
        .ok_or_else(|| Error::Lookup(format!("unit {unit} not in the {which} split")))?;
    let export = export_attention(&ckpt.model, &ckpt.condition_model, traj, cycles.map(|(a, b)| a..=b))?;
    fs::create_dir_all(out)?;
    let mut w = create(&out.join("attention_feature.csv"))?;
    write_attention_feature(&export, &mut w)?;
    w.flush()?;
    let mut w = create(&out.join("attention_cycle_sums.csv"))?;
    write_cycle_sums(&export, &mut w)?;
    w.flush()?;
    write_json(&out.join("attention.json"), &export)?;
    println!(
        "unit {unit}: {} cycles exported to {}",
        export.cycles.len(),
        out.display()
    );
    Ok(())
}
