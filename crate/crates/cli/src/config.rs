//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::Path;

use dualseg_core::nn::UNetConfig;
use dualseg_core::phantom::PhantomConfig;
use dualseg_core::training::{SliceConfig, TrainConfig, TrainSeeds};
use dualseg_core::Error;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// `train : val : test`.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratios: [7.0, 1.0, 2.0], seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = UNetConfig::desk();
        Self { depth: d.depth, base_channels: d.base_channels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub init: u64,
    pub shuffle: u64,
    pub augment: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { init: 11, shuffle: 12, augment: 13 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { batch_size: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlayBase {
    #[default]
    Ct,
    Pet,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlayConfig {
    /// Defaults to the first test patient.
    pub patient_id: Option<String>,
    /// Defaults to the plane with the most reference lesion voxels.
    pub z: Option<usize>,
    pub base: OverlayBase,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub phantom: PhantomConfig,
    pub preprocess: SliceConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: SeedConfig,
    pub eval: EvalConfig,
    pub overlay: OverlayConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::ConfigParse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::MissingInput(path.to_path_buf())
            } else {
                CliError::Core(Error::Io { path: path.to_path_buf(), source: e })
            }
        })?;
        let cfg = Self::from_toml(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.phantom.validate()?;
        self.preprocess.window.validate()?;
        self.train.validate()?;
        self.unet().validate()?;
        let [a, b, c] = self.split.ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::InvalidConfig("split.ratios must all be positive".into()).into());
        }
        if self.eval.batch_size == 0 {
            return Err(Error::InvalidConfig("eval.batch_size must be at least 1".into()).into());
        }
        Ok(())
    }

    /// One seed replaces every seed in the file.
    pub fn override_seed(&mut self, seed: u64) {
        self.phantom.seed = seed;
        self.split.seed = seed;
        self.seeds = SeedConfig { init: seed, shuffle: seed.wrapping_add(1), augment: seed.wrapping_add(2) };
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            in_channels: self.train.channels.count(),
            out_channels: 1,
            depth: self.model.depth,
            base_channels: self.model.base_channels,
            input_size: self.preprocess.size,
        }
    }

    pub fn train_seeds(&self) -> TrainSeeds {
        TrainSeeds { model: self.seeds.init, shuffle: self.seeds.shuffle, augment: self.seeds.augment }
    }
}
