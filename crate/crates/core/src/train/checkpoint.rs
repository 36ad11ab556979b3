//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      8 bytes   "RULCKPT\0"
//! version    u32
//! tensors    u32       number of parameter tensors
//! per tensor:
//!   name     u32 length + UTF-8 bytes
//!   dtype    u8        1 = f32, 2 = f64
//!   rank     u32, then rank × u64 dims
//! metadata   u64 length + JSON { model, train, condition_model }
//! buffers    each tensor's values in order, dtype width per value
//! digest     32 bytes  SHA-256 of everything above
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::data::ConditionModel;
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, Parameter, RulModel};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"RULCKPT\0";
pub const VERSION: u32 = 1;

/// Everything needed to reproduce inference: weights, architecture,
/// training settings and the fitted normalisation state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: RulModel<f32>,
    pub train: TrainConfig,
    pub condition_model: ConditionModel,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    train: TrainConfig,
    condition_model: ConditionModel,
}

impl Checkpoint {
    /// Refuses data windowed differently from the training data.
    pub fn ensure_window(&self, window: usize) -> Result<()> {
        if window != self.model.config().window {
            return Err(Error::Config(format!(
                "checkpoint was trained on windows of {} cycles, data uses {window}",
                self.model.config().window
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(f32::DTYPE);
            out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&Meta {
            model: self.model.config().clone(),
            train: self.train.clone(),
            condition_model: self.condition_model.clone(),
        })?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for p in params {
            for &v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut r = Reader {
            bytes: &bytes[..bytes.len() - 32],
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        if Sha256::digest(r.bytes).as_slice() != &bytes[bytes.len() - 32..] {
            return Err(Error::Checkpoint(
                "digest mismatch: file is truncated or corrupt".into(),
            ));
        }
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            table.push((name, dtype, shape));
        }
        let meta_len = r.u64()? as usize;
        let meta: Meta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let mut params = Vec::with_capacity(table.len());
        for (name, dtype, shape) in table {
            let n: usize = shape.iter().product();
            let value: Tensor<f32> = match dtype {
                d if d == f32::DTYPE => {
                    let raw = r.take(n * 4)?;
                    Tensor::new(shape, raw.chunks_exact(4).map(f32::from_le_slice).collect())?
                }
                d if d == f64::DTYPE => {
                    let raw = r.take(n * 8)?;
                    Tensor::<f64>::new(shape, raw.chunks_exact(8).map(f64::from_le_slice).collect())?.cast()
                }
                other => return Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
            };
            params.push(Parameter { name, value });
        }
        if r.pos != r.bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after parameter buffers".into()));
        }
        meta.condition_model
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let model = RulModel::from_parameters(meta.model, params)?;
        Ok(Checkpoint {
            model,
            train: meta.train,
            condition_model: meta.condition_model,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn checkpoint_save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
