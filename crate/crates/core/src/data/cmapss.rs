use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SENSORS, SETTINGS};
use crate::error::{Error, Result};

/// One engine cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub cycle: u32,
    pub settings: [f64; SETTINGS],
    pub sensors: [f64; SENSORS],
}

impl Row {
    /// Settings followed by sensors.
    pub fn channels(&self) -> impl Iterator<Item = f64> + '_ {
        self.settings.iter().chain(self.sensors.iter()).copied()
    }
}

/// The cycles recorded for one engine, in order, starting at cycle 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTrajectory {
    pub unit_id: u32,
    pub rows: Vec<Row>,
}

impl RawTrajectory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

const COLUMNS: usize = 2 + SETTINGS + SENSORS;

fn parse_integer(tok: &str, line: usize, what: &str) -> Result<u32> {
    // Some exports write integer columns as "12.0".
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} {tok:?} is not a number"),
    })?;
    if v.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&v) {
        return Err(Error::Parse {
            line,
            message: format!("{what} {tok:?} is not a positive integer"),
        });
    }
    Ok(v as u32)
}

/// Reads C-MAPSS / PHM08 rows: unit, cycle, 3 settings, 21 sensors per line.
///
/// Blank lines and trailing whitespace are ignored. Each unit's rows must be
/// contiguous with cycles 1, 2, 3, ...; trajectories come back in file order.
pub fn parse_cmapss<R: BufRead>(reader: R) -> Result<Vec<RawTrajectory>> {
    let mut out: Vec<RawTrajectory> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != COLUMNS {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {COLUMNS} columns, found {}", toks.len()),
            });
        }
        let unit = parse_integer(toks[0], line_no, "unit")?;
        let cycle = parse_integer(toks[1], line_no, "cycle")?;
        let mut values = [0.0; SETTINGS + SENSORS];
        for (slot, tok) in values.iter_mut().zip(&toks[2..]) {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{tok:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite value {tok:?}"),
                });
            }
            *slot = v;
        }
        let mut settings = [0.0; SETTINGS];
        let mut sensors = [0.0; SENSORS];
        settings.copy_from_slice(&values[..SETTINGS]);
        sensors.copy_from_slice(&values[SETTINGS..]);
        let row = Row {
            cycle,
            settings,
            sensors,
        };

        match out.last_mut() {
            Some(traj) if traj.unit_id == unit => {
                let expected = traj.rows.len() as u32 + 1;
                if cycle != expected {
                    return Err(Error::Integrity(format!(
                        "line {line_no}: unit {unit} jumps from cycle {} to {cycle}",
                        expected - 1
                    )));
                }
                traj.rows.push(row);
            }
            _ => {
                if out.iter().any(|t| t.unit_id == unit) {
                    return Err(Error::Integrity(format!(
                        "line {line_no}: rows of unit {unit} are not contiguous"
                    )));
                }
                if cycle != 1 {
                    return Err(Error::Integrity(format!(
                        "line {line_no}: unit {unit} starts at cycle {cycle}, expected 1"
                    )));
                }
                out.push(RawTrajectory {
                    unit_id: unit,
                    rows: vec![row],
                });
            }
        }
    }
    Ok(out)
}

/// Writes trajectories back in the same 26-column layout.
pub fn write_cmapss<W: Write>(mut w: W, trajectories: &[RawTrajectory]) -> Result<()> {
    for t in trajectories {
        for r in &t.rows {
            write!(w, "{} {}", t.unit_id, r.cycle)?;
            for v in r.channels() {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Reads one non-negative integer RUL per line. `expected` is the number of
/// test trajectories the file must cover.
pub fn parse_rul_truth<R: BufRead>(reader: R, expected: usize) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        let v: f64 = tok.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("{tok:?} is not a number"),
        })?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("{tok:?} is not a non-negative integer"),
            });
        }
        out.push(v as u32);
    }
    if out.len() != expected {
        return Err(Error::Integrity(format!(
            "truth file has {} values for {expected} test trajectories",
            out.len()
        )));
    }
    Ok(out)
}

/// The three files of one sub-dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<RawTrajectory>,
    pub test: Vec<RawTrajectory>,
    /// RUL after the last recorded cycle of each test trajectory.
    pub truth: Vec<u32>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Lookup(format!("{}: {e}", path.display())))
}

/// Paths of `train_{name}.txt`, `test_{name}.txt` and `RUL_{name}.txt`.
pub fn dataset_files(dir: &Path, name: &str) -> [std::path::PathBuf; 3] {
    [
        dir.join(format!("train_{name}.txt")),
        dir.join(format!("test_{name}.txt")),
        dir.join(format!("RUL_{name}.txt")),
    ]
}

/// Loads e.g. `FD001` from a directory laid out like the NASA archive.
fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// Reads one C-MAPSS trajectory file; errors name the file.
pub fn load_trajectories(path: &Path) -> Result<Vec<RawTrajectory>> {
    parse_cmapss(open(path)?).map_err(|e| with_path(path, e))
}

/// Reads a truth file that must hold `expected` values.
pub fn load_truth(path: &Path, expected: usize) -> Result<Vec<u32>> {
    parse_rul_truth(open(path)?, expected).map_err(|e| with_path(path, e))
}

pub fn load_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    let [train_path, test_path, truth_path] = dataset_files(dir, name);
    let train = load_trajectories(&train_path)?;
    let test = load_trajectories(&test_path)?;
    let truth = load_truth(&truth_path, test.len())?;
    if train.is_empty() {
        return Err(Error::Integrity(format!("{}: no rows", train_path.display())));
    }
    Ok(Dataset {
        name: name.to_string(),
        train,
        test,
        truth,
    })
}
