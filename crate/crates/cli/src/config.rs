//! Experiment configuration: a flat TOML file, every key overridable by the
//! command-line flag of the same name.
//!
//! ```toml
//! data-dir = "data/CMAPSSData"
//! dataset = "FD002"
//! conditions = 6
//! window = 30
//! mode = "F+T"
//! seeds = [0, 1, 2]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rul_core::data::{dataset_files, CHANNELS};
use rul_core::nn::{Mode, ModelConfig};
use rul_core::train::TrainConfig;
use rul_core::Error;
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Directory holding `train_X.txt`, `test_X.txt` and `RUL_X.txt`.
    pub data_dir: Option<PathBuf>,
    /// Dataset name `X`, e.g. `FD001`.
    pub dataset: Option<String>,
    /// Explicit paths; each wins over `data-dir` + `dataset`.
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub truth_file: Option<PathBuf>,
    /// Operating conditions to cluster (1 = global normalisation).
    pub conditions: usize,
    pub window: usize,
    pub r_max: u32,
    pub mode: Mode,
    pub feature_heads: usize,
    pub sequence_heads: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub grad_clip: Option<f64>,
    /// Cap test truth at `r-max` when scoring.
    pub clip_test: bool,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelConfig::new(CHANNELS, 30);
        let t = TrainConfig::default();
        ExperimentConfig {
            data_dir: None,
            dataset: None,
            train_file: None,
            test_file: None,
            truth_file: None,
            conditions: 1,
            window: t.window,
            r_max: t.r_max,
            mode: m.mode,
            feature_heads: m.feature_heads,
            sequence_heads: m.sequence_heads,
            lstm_layers: m.lstm_layers,
            lstm_hidden: m.lstm_hidden,
            mlp_hidden: m.mlp_hidden,
            dropout: m.dropout,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            patience: t.patience,
            max_epochs: t.max_epochs,
            validation_fraction: t.validation_fraction,
            grad_clip: t.grad_clip,
            clip_test: true,
            seeds: vec![0, 1, 2],
            out: PathBuf::from("runs"),
        }
    }
}

/// Flag overrides, one per config key.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    #[arg(long, global = true)]
    pub train_file: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test_file: Option<PathBuf>,
    #[arg(long, global = true)]
    pub truth_file: Option<PathBuf>,
    #[arg(long, global = true)]
    pub conditions: Option<usize>,
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub r_max: Option<u32>,
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub feature_heads: Option<usize>,
    #[arg(long, global = true)]
    pub sequence_heads: Option<usize>,
    #[arg(long, global = true)]
    pub lstm_layers: Option<usize>,
    #[arg(long, global = true)]
    pub lstm_hidden: Option<usize>,
    #[arg(long, global = true)]
    pub mlp_hidden: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub validation_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub grad_clip: Option<f64>,
    #[arg(long, global = true)]
    pub clip_test: Option<bool>,
    /// Comma-separated seed list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Single run seed; replaces the seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v; })*
    };
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let o = self;
        apply!(cfg, o; conditions, window, r_max, mode, feature_heads, sequence_heads, lstm_layers,
            lstm_hidden, mlp_hidden, dropout, learning_rate, batch_size, patience, max_epochs,
            validation_fraction, clip_test, seeds, out);
        for (slot, v) in [
            (&mut cfg.data_dir, &o.data_dir),
            (&mut cfg.train_file, &o.train_file),
            (&mut cfg.test_file, &o.test_file),
            (&mut cfg.truth_file, &o.truth_file),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        if o.dataset.is_some() {
            cfg.dataset.clone_from(&o.dataset);
        }
        if o.grad_clip.is_some() {
            cfg.grad_clip = o.grad_clip;
        }
        if let Some(s) = o.seed {
            cfg.seeds = vec![s];
        }
    }
}

/// Train, test and truth files resolved from a config.
#[derive(Clone, Debug, PartialEq)]
pub struct DataFiles {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads a TOML config, or the config embedded in a run manifest
    /// (`.json`).
    pub fn load(path: &Path) -> Result<(Self, Option<Manifest>), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m = Manifest::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            return Ok((m.config.clone(), Some(m)));
        }
        let cfg = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok((cfg, None))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            features: CHANNELS,
            window: self.window,
            mode: self.mode,
            feature_heads: self.feature_heads,
            sequence_heads: self.sequence_heads,
            lstm_layers: self.lstm_layers,
            lstm_hidden: self.lstm_hidden,
            mlp_hidden: self.mlp_hidden,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            patience: self.patience,
            max_epochs: self.max_epochs,
            validation_fraction: self.validation_fraction,
            r_max: self.r_max,
            window: self.window,
            feature_heads: self.feature_heads,
            sequence_heads: self.sequence_heads,
            seed,
            grad_clip: self.grad_clip,
        }
    }

    /// The first configured seed.
    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    /// Rejects every inconsistent setting before any data is touched.
    pub fn validate(&self) -> Result<(), Error> {
        if self.conditions == 0 {
            return Err(Error::Config("conditions must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.model_config().validate()?;
        self.train_config(0).validate()
    }

    pub fn data_files(&self) -> Result<DataFiles, Error> {
        let DataFiles { train, test, truth } = self.data_files_lenient();
        if train.as_os_str().is_empty() {
            return Err(Error::Config(
                "no training data: set data-dir and dataset, or train-file".into(),
            ));
        }
        Ok(DataFiles { train, test, truth })
    }

    /// Like [`data_files`](Self::data_files) but leaves `train` empty when
    /// nothing names it.
    pub fn data_files_lenient(&self) -> DataFiles {
        let named = match (&self.data_dir, &self.dataset) {
            (Some(dir), Some(name)) => Some(dataset_files(dir, name)),
            _ => None,
        };
        let pick =
            |explicit: &Option<PathBuf>, i: usize| explicit.clone().or_else(|| named.as_ref().map(|f| f[i].clone()));
        DataFiles {
            train: pick(&self.train_file, 0).unwrap_or_default(),
            test: pick(&self.test_file, 1),
            truth: pick(&self.truth_file, 2),
        }
    }
}
