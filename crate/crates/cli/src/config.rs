//! Run configuration, read from a TOML file.
//!
//! Every section and key is optional; missing values take their defaults.
//! Unknown keys are rejected. `model.vocab_size` is replaced by the size of
//! the vocabulary built from the training data.

use std::path::{Path, PathBuf};

use aqcf_core::model::ModelConfig;
use aqcf_core::training::{PlateauConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    /// Held-out file; when absent a `holdout` fraction of `train` is used.
    pub test: Option<PathBuf>,
    pub holdout: f64,
    pub truncate: bool,
    pub min_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            holdout: 0.2,
            truncate: true,
            min_count: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub data: DataConfig,
    pub plateau: PlateauConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            data: DataConfig::default(),
            plateau: PlateauConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`; relative data paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.train, &mut cfg.data.test].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.training.validate()?;
        if !(0.0..1.0).contains(&self.data.holdout) {
            return Err(CliError::Config(format!("data.holdout {} outside [0, 1)", self.data.holdout)));
        }
        if self.data.min_count == 0 {
            return Err(CliError::Config("data.min_count must be at least 1".into()));
        }
        Ok(())
    }
}
