//! The TOML run configuration shared by the simulator, detector and
//! evaluation tools.
//!
//! ```toml
//! [scenario]        # ScenarioConfig
//! [noise]           # NoiseModel; replaces scenario.noise when present
//! [ranging]         # RangingModelParams
//! [sampling]        # SamplingPolicy
//! [detector]        # DetectorConfig
//! [baseline]        # BaselineConfig
//! [[attack]]        # AttackSpec, repeated
//! ```
//!
//! Every section is optional. `OPPRAIM_SEED` replaces every seed in the file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::DetectorConfig;
use crate::eval::BaselineConfig;
use crate::positioning::RangingModelParams;
use crate::sim::{AttackSpec, NoiseModel, ScenarioConfig};
use crate::subsets::SamplingPolicy;

pub const SEED_ENV: &str = "OPPRAIM_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    scenario: ScenarioConfig,
    noise: Option<NoiseModel>,
    ranging: RangingModelParams,
    sampling: SamplingPolicy,
    detector: DetectorConfig,
    baseline: BaselineConfig,
    attack: Vec<AttackSpec>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub ranging: RangingModelParams,
    pub sampling: SamplingPolicy,
    pub detector: DetectorConfig,
    pub baseline: BaselineConfig,
    pub attacks: Vec<AttackSpec>,
}

impl RunConfig {
    /// Parses and validates without consulting the environment.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut scenario = raw.scenario;
        if let Some(noise) = raw.noise {
            scenario.noise = noise;
        }
        let cfg = RunConfig {
            scenario,
            ranging: raw.ranging,
            sampling: raw.sampling,
            detector: raw.detector,
            baseline: raw.baseline,
            attacks: raw.attack,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file and applies `OPPRAIM_SEED` when set.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse::<u64>().map_err(|_| {
                ConfigError::Invalid(format!("{SEED_ENV}='{v}' is not an unsigned integer"))
            })?;
            cfg.override_seed(seed);
        }
        Ok(cfg)
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.scenario.rng_seed = seed;
        if self.scenario.geometry_seed.is_some() {
            self.scenario.geometry_seed = Some(seed);
        }
        self.sampling.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.scenario.validate().map_err(|e| inv(e.to_string()))?;
        self.scenario
            .noise
            .validate()
            .map_err(|e| inv(e.to_string()))?;
        self.ranging.validate().map_err(inv)?;
        self.sampling.validate().map_err(inv)?;
        self.detector.validate().map_err(|e| inv(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawConfig {
            scenario: self.scenario.clone(),
            noise: None,
            ranging: self.ranging.clone(),
            sampling: self.sampling.clone(),
            detector: self.detector.clone(),
            baseline: self.baseline.clone(),
            attack: self.attacks.clone(),
        };
        toml::to_string(&raw).expect("config types serialize")
    }
}
