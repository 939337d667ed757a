//! The run configuration: one JSON document holding every block.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::ItlinqConfig;
use crate::channel::{FadingModel, GeometryConfig};
use crate::error::{Result, RrmError};
use crate::executor::ExecutionConfig;
use crate::rate::dbm_to_watts;
use crate::trainer::{GnnConfig, Problem, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub p_max_dbm: f64,
    pub noise_dbm: f64,
    /// Minimum ergodic rate per user, bits/s/Hz.
    pub f_min: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            p_max_dbm: 10.0,
            noise_dbm: -104.0,
            f_min: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_size: 256,
            test_size: 128,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub fading: FadingModel,
    pub power: PowerConfig,
    pub dataset: DatasetConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub execution: ExecutionConfig,
    pub itlinq: ItlinqConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let p = &self.power;
        if !p.p_max_dbm.is_finite() {
            return Err(RrmError::config("power.p_max_dbm", "must be finite"));
        }
        if !p.noise_dbm.is_finite() {
            return Err(RrmError::config("power.noise_dbm", "must be finite"));
        }
        if !(p.f_min.is_finite() && p.f_min >= 0.0) {
            return Err(RrmError::config("power.f_min", "must be >= 0"));
        }
        if self.dataset.train_size == 0 {
            return Err(RrmError::config("dataset.train_size", "must be >= 1"));
        }
        self.gnn.validate()?;
        self.train.validate()?;
        self.execution.validate()?;
        self.itlinq.validate()
    }

    pub fn problem(&self) -> Problem {
        Problem {
            p_max: dbm_to_watts(self.power.p_max_dbm),
            noise: dbm_to_watts(self.power.noise_dbm),
            f_min: self.power.f_min,
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RrmError::io(path, e))?;
        let cfg = Self::from_json(&text).map_err(|e| RrmError::config("config", format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
