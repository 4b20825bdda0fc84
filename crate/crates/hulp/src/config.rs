//! TOML run configuration. Every field has a default, and CLI flags
//! override whatever the file sets.

use std::path::{Path, PathBuf};

use hulp_core::data::SyntheticConfig;
use hulp_core::experiments::{compact_model, SWEEP_RATES};
use hulp_core::training::TrainConfig;
use hulp_core::HulpConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub port: u16,
    /// Directory of static UI assets served under `/`.
    pub static_dir: Option<PathBuf>,
    pub cohort: SyntheticConfig,
    pub model: HulpConfig,
    pub train: TrainConfig,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub rates: Vec<f64>,
    pub knn_k: usize,
    pub with_oracle: bool,
    /// Fractions of parent categories intervened on.
    pub fractions: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            rates: SWEEP_RATES.to_vec(),
            knn_k: 1,
            with_oracle: false,
            fractions: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            folds: 5,
            seeds: vec![0, 1, 2],
            port: 8080,
            static_dir: None,
            cohort: SyntheticConfig::default(),
            model: compact_model(),
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: hulp_core::Error| ConfigError::Invalid(e.to_string());
        if self.folds < 2 {
            return Err(ConfigError::Invalid("folds must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        self.cohort.validate().map_err(invalid)?;
        self.model.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        if self.sweep.knn_k == 0 {
            return Err(ConfigError::Invalid("sweep.knn_k must be positive".into()));
        }
        Ok(())
    }
}
