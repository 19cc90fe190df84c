use std::fs;
use std::path::Path;

use dkdfmh::data::IemocapOptions;
use dkdfmh::dsp::FbankConfig;
use dkdfmh::model::ModelConfig;
use dkdfmh::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Seeds synthetic generation and the train/test split.
    pub seed: u64,
    pub n_per_class: usize,
    pub train_fraction: f64,
    /// Standardize every mel bin with statistics of the training cache.
    pub normalize: bool,
    pub iemocap: IemocapOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { seed: 7, n_per_class: 25, train_fraction: 0.8, normalize: true, iemocap: IemocapOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub betas: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], betas: dkdfmh::metrics::DEFAULT_BETAS.to_vec() }
    }
}

/// Everything a command may read. Unset sections keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub fbank: FbankConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl Config {
    /// Reads a TOML config, or the config snapshot inside a `.json` manifest.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: RunManifest = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("bad manifest {}: {e}", path.display())))?;
            return Ok(manifest.config);
        }
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds { data: self.data.seed, init: self.train.seed, shuffle: self.train.shuffle_seed }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Failure::Usage(format!("train_fraction must be in (0, 1), got {}", self.data.train_fraction)));
        }
        Ok(())
    }
}
