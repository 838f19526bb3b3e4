//! TOML run configuration. Every section is optional and falls back to the
//! defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{RingSpec, ToyDataset};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::ModelConfig;
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::train::{SdftConfig, TrainConfig};

/// The source ring and the limited target derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: RingSpec,
    pub source_points: usize,
    pub target_radius: f64,
    pub keep_modes: Vec<usize>,
    pub target_points: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: RingSpec::default(),
            source_points: 8000,
            target_radius: 2.0,
            keep_modes: vec![0, 1, 2],
            target_points: 600,
        }
    }
}

impl DataConfig {
    pub fn source_dataset(&self, seed: u64) -> Result<ToyDataset> {
        ToyDataset::ring(self.source, self.source_points, seed)
    }

    pub fn target_dataset(&self, seed: u64) -> Result<ToyDataset> {
        ToyDataset::limited_target(self.source, self.target_radius, &self.keep_modes, self.target_points, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sdft: SdftConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        NoiseSchedule::new(self.schedule)?;
        self.model.validate()?;
        self.train.validate()?;
        self.sdft.validate()?;
        if self.data.keep_modes.is_empty() {
            return Err(Error::Config("data.keep_modes must not be empty".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_toml().as_bytes())
    }
}
