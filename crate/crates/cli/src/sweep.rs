//! Parameter sweeps: one training run per (value, seed), collected into a
//! long-format `sweep.csv`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rul_core::train::TrainingLog;
use rul_core::Error;

use crate::commands::{train_into, METRICS};
use crate::config::ExperimentConfig;
use crate::pipeline::{self, Metrics, RawData, TestSplit};
use crate::CliError;

pub const HEADER: &str = "param,value,seed,rmse,score,rmse_unclipped,score_unclipped,epochs,wall_time_s,status";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    FeatureHeads,
    SequenceHeads,
    Window,
    RMax,
    Mode,
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "feature_heads" => Ok(SweepParam::FeatureHeads),
            "sequence_heads" => Ok(SweepParam::SequenceHeads),
            "window" => Ok(SweepParam::Window),
            "r_max" => Ok(SweepParam::RMax),
            "mode" => Ok(SweepParam::Mode),
            _ => Err(format!(
                "unknown sweep parameter {s:?}; expected feature_heads, sequence_heads, window, r_max or mode"
            )),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::FeatureHeads => "feature_heads",
            SweepParam::SequenceHeads => "sequence_heads",
            SweepParam::Window => "window",
            SweepParam::RMax => "r_max",
            SweepParam::Mode => "mode",
        })
    }
}

/// `base` with `param` set to `value`, validated.
pub fn configure(base: &ExperimentConfig, param: SweepParam, value: &str) -> Result<ExperimentConfig, Error> {
    let bad = |e: String| Error::Config(format!("{param} = {value:?}: {e}"));
    let int = || value.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
    let mut cfg = base.clone();
    match param {
        SweepParam::FeatureHeads => cfg.feature_heads = int()?,
        SweepParam::SequenceHeads => cfg.sequence_heads = int()?,
        SweepParam::Window => cfg.window = int()?,
        SweepParam::RMax => cfg.r_max = u32::try_from(int()?).map_err(|e| bad(e.to_string()))?,
        SweepParam::Mode => cfg.mode = value.parse()?,
    }
    cfg.validate().map_err(|e| bad(e.to_string()))?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: String,
    pub seed: u64,
    pub outcome: Result<(Metrics, usize), String>,
    pub wall_time_s: f64,
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let head = format!("{},{},{}", self.param, self.value, self.seed);
        match &self.outcome {
            Ok((m, epochs)) => format!(
                "{head},{},{},{},{},{epochs},{:.3},ok",
                m.rmse, m.score, m.rmse_unclipped, m.score_unclipped, self.wall_time_s
            ),
            Err(e) => format!(
                "{head},,,,,,{:.3},failed: {}",
                self.wall_time_s,
                e.replace([',', '\n', '\r'], ";")
            ),
        }
    }
}

struct Job {
    value: String,
    seed: u64,
    cfg: ExperimentConfig,
    dir: PathBuf,
}

fn run_dir(out: &Path, param: SweepParam, value: &str, seed: u64) -> PathBuf {
    let value: String = value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '+' {
                c
            } else {
                '_'
            }
        })
        .collect();
    out.join(format!("{param}-{value}")).join(format!("seed-{seed}"))
}

fn in_process(job: &Job, raw: &RawData) -> Result<(Metrics, usize), CliError> {
    let (cm, set) = pipeline::prepare(&job.cfg, &raw.train, job.seed)?;
    let run = pipeline::train(&job.cfg, cm, &set, job.seed, |_| {})?;
    let mut inputs = raw.inputs.clone();
    let test = raw.test.as_ref().expect("sweeps load the test split");
    inputs.extend(test.inputs.iter().cloned());
    let (log, metrics) = train_into(&job.cfg, &job.dir, job.seed, run, Some(test), inputs)?;
    Ok((metrics.expect("evaluated"), log.epochs.len()))
}

fn child_process(job: &Job) -> Result<(Metrics, usize), String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let out = Command::new(exe)
        .arg("--config")
        .arg(job.dir.join("run.toml"))
        .args(["train", "--evaluate"])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        let err = String::from_utf8_lossy(&out.stderr);
        let last = err
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .unwrap_or("child failed");
        return Err(last.trim().to_string());
    }
    let read = |name: &str| fs::read_to_string(job.dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let metrics: Metrics = serde_json::from_str(&read(METRICS)?).map_err(|e| e.to_string())?;
    let log: TrainingLog = serde_json::from_str(&read("training_log.json")?).map_err(|e| e.to_string())?;
    Ok((metrics, log.epochs.len()))
}

fn write_table(path: &Path, rows: &[Option<SweepRow>]) -> Result<(), CliError> {
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in rows.iter().flatten() {
        s += &r.csv_line();
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Runs the sweep; fails only when every run failed.
pub fn run(
    base: &ExperimentConfig,
    out: &Path,
    param: SweepParam,
    values: &[String],
    repetitions: Option<usize>,
    parallel: Option<usize>,
) -> Result<(), CliError> {
    let seeds: Vec<u64> = match repetitions {
        Some(0) => return Err(CliError::Usage("--repetitions must be at least 1".into())),
        Some(n) => (0..n as u64).map(|i| base.seed() + i).collect(),
        None => base.seeds.clone(),
    };
    let mut jobs = Vec::new();
    for v in values {
        let cfg = configure(base, param, v)?;
        for &seed in &seeds {
            let dir = run_dir(out, param, v, seed);
            jobs.push(Job {
                value: v.clone(),
                seed,
                cfg: ExperimentConfig {
                    seeds: vec![seed],
                    out: dir.clone(),
                    ..cfg.clone()
                },
                dir,
            });
        }
    }
    let raw = pipeline::load_raw(base, TestSplit::Require)?;
    for job in &jobs {
        fs::create_dir_all(&job.dir)?;
        fs::write(job.dir.join("run.toml"), job.cfg.to_toml())?;
    }
    let table = out.join("sweep.csv");
    let rows: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; jobs.len()]);
    let finish = |i: usize, outcome: Result<(Metrics, usize), String>, t: Instant| -> Result<(), CliError> {
        let job = &jobs[i];
        let row = SweepRow {
            param,
            value: job.value.clone(),
            seed: job.seed,
            outcome,
            wall_time_s: t.elapsed().as_secs_f64(),
        };
        eprintln!("{}", row.csv_line());
        let mut rows = rows.lock().expect("no panics while holding the lock");
        rows[i] = Some(row);
        write_table(&table, &rows)
    };
    write_table(&table, &[])?;
    match parallel {
        Some(n) if n > 1 => {
            let next = AtomicUsize::new(0);
            let failure = Mutex::new(None);
            std::thread::scope(|s| {
                for _ in 0..n.min(jobs.len()) {
                    s.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= jobs.len() {
                            break;
                        }
                        let t = Instant::now();
                        if let Err(e) = finish(i, child_process(&jobs[i]), t) {
                            *failure.lock().expect("lock") = Some(e);
                        }
                    });
                }
            });
            if let Some(e) = failure.into_inner().expect("lock") {
                return Err(e);
            }
        }
        _ => {
            for (i, job) in jobs.iter().enumerate() {
                let t = Instant::now();
                finish(i, in_process(job, &raw).map_err(|e| e.to_string()), t)?;
            }
        }
    }
    let rows = rows.into_inner().expect("lock");
    let ok = rows.iter().flatten().filter(|r| r.outcome.is_ok()).count();
    println!("{ok} of {} runs succeeded; table at {}", rows.len(), table.display());
    if ok == 0 {
        return Err(CliError::Runtime(format!("all {} sweep runs failed", rows.len())));
    }
    Ok(())
}
