//! Versioned JSON documents for fitted normalisation state and windowed
//! datasets.
//!
//! Both start with `"format"` and `"version"` keys; readers reject anything
//! else. Floats are written in shortest round-trip form.
//!
//! ```text
//! { "format": "rul-condition-model", "version": 1,
//!   "centroids": [[s1, s2, s3], ...],
//!   "stats": [{ "rows": n, "mean": [24 values], "std": [24 values] }, ...] }
//!
//! { "format": "rul-windowed-dataset", "version": 1,
//!   "split": "train" | "test", "r_max": 125, "clip": 125 | null,
//!   "truth": [..] | null, "condition_model": { centroids, stats },
//!   "windows": { "window": 30,
//!                "series": [{ "unit_id", "conditions", "values" }, ...],
//!                "index": [{ "series", "end_cycle", "label" }, ...] } }
//! ```

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ConditionModel, WindowSet};
use crate::error::{Error, Result};

pub const CONDITION_FORMAT: &str = "rul-condition-model";
pub const DATASET_FORMAT: &str = "rul-windowed-dataset";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub split: Split,
    pub r_max: u32,
    /// Cap applied to test labels, if any.
    pub clip: Option<u32>,
    /// Unclipped test RULs, one per series.
    pub truth: Option<Vec<u32>>,
    pub condition_model: ConditionModel,
    pub windows: WindowSet,
}

fn write_doc<W: Write, T: Serialize>(w: W, format: &str, body: &T) -> Result<()> {
    serde_json::to_writer(
        w,
        &Envelope {
            format: format.to_string(),
            version: VERSION,
            body,
        },
    )?;
    Ok(())
}

fn read_doc<R: Read, T: DeserializeOwned>(r: R, format: &str) -> Result<T> {
    let doc: Envelope<serde_json::Value> = serde_json::from_reader(r)?;
    if doc.format != format {
        return Err(Error::Integrity(format!(
            "expected a {format} document, found {:?}",
            doc.format
        )));
    }
    if doc.version != VERSION {
        return Err(Error::Integrity(format!(
            "unsupported {format} version {}",
            doc.version
        )));
    }
    Ok(serde_json::from_value(doc.body)?)
}

pub fn write_condition_model<W: Write>(w: W, cm: &ConditionModel) -> Result<()> {
    write_doc(w, CONDITION_FORMAT, cm)
}

pub fn read_condition_model<R: Read>(r: R) -> Result<ConditionModel> {
    let cm: ConditionModel = read_doc(r, CONDITION_FORMAT)?;
    cm.validate()?;
    Ok(cm)
}

pub fn write_dataset<W: Write>(w: W, ds: &WindowedDataset) -> Result<()> {
    write_doc(w, DATASET_FORMAT, ds)
}

pub fn read_dataset<R: Read>(r: R) -> Result<WindowedDataset> {
    let ds: WindowedDataset = read_doc(r, DATASET_FORMAT)?;
    ds.condition_model.validate()?;
    let n = ds.windows.series.len();
    for s in &ds.windows.series {
        if s.values.len() != s.conditions.len() * super::CHANNELS {
            return Err(Error::Integrity(format!(
                "unit {} has a malformed value table",
                s.unit_id
            )));
        }
    }
    for w in &ds.windows.index {
        let ok = w.series < n && w.end_cycle >= 1 && w.end_cycle as usize <= ds.windows.series[w.series].len();
        if !ok {
            return Err(Error::Integrity(format!("window {w:?} points outside its series")));
        }
    }
    Ok(ds)
}
