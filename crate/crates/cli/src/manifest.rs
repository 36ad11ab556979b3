//! Run manifests: the resolved config, the seed, and content hashes of every
//! input and output file.

use std::fs;
use std::path::{Path, PathBuf};

use rul_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const FORMAT: &str = "rul-run-manifest";
pub const VERSION: u32 = 1;

/// SHA-256 of `"blob <len>\0" + bytes`, the way git hashes file contents.
pub fn blob_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: PathBuf,
    pub blob_sha256: String,
}

impl FileDigest {
    pub fn of(role: &str, path: &Path) -> Result<Self, Error> {
        let bytes = fs::read(path).map_err(|e| Error::Lookup(format!("{}: {e}", path.display())))?;
        Ok(FileDigest {
            role: role.to_string(),
            path: path.to_path_buf(),
            blob_sha256: blob_sha256(&bytes),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &ExperimentConfig) -> Self {
        Manifest {
            format: FORMAT.into(),
            version: VERSION,
            command: command.into(),
            seed,
            config: ExperimentConfig {
                seeds: vec![seed],
                ..config.clone()
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(format!(
                "not a {FORMAT} v{VERSION} document ({} v{})",
                m.format, m.version
            ));
        }
        Ok(m)
    }

    /// Fails if any recorded input changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<(), Error> {
        for want in &self.inputs {
            let got = FileDigest::of(&want.role, &want.path)?;
            if got.blob_sha256 != want.blob_sha256 {
                return Err(Error::Integrity(format!(
                    "{} changed since the manifest was written ({} vs {})",
                    want.path.display(),
                    got.blob_sha256,
                    want.blob_sha256
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest is plain data") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `git hash-object` in a sha256 repository
        assert_eq!(
            blob_sha256(b"hello"),
            "8aec4e4876f854f688d0ebfc8f37598f38e5fd6903cccc850ca36591175aeb60"
        );
        assert_eq!(
            blob_sha256(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
