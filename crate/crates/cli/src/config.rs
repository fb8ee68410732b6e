use anyhow::{bail, Context, Result};
use radiosem::fedtrain::AggregationScope;
use radiosem::genmodel::TrainConfig;
use radiosem::harness::{PipelineConfig, SceneConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Everything a config file may set. Missing sections take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub fed: FedSection,
    pub codebook: CodebookSection,
    pub data: DataSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedSection {
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub clients_per_round: Option<usize>,
    pub scope: AggregationScope,
}

impl Default for FedSection {
    fn default() -> Self {
        FedSection {
            clients: 2,
            rounds: 10,
            local_epochs: 2,
            clients_per_round: None,
            scope: AggregationScope::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookSection {
    pub size: usize,
    pub patch: usize,
    pub scenes: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for CodebookSection {
    fn default() -> Self {
        CodebookSection { size: 256, patch: 8, scenes: 40, iters: 20, seed: 0 }
    }
}

/// How scenes on disk are turned into training and test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Share of scenes (taken from the end, in name order) held out for testing.
    pub test_fraction: f64,
    /// Used when a scene directory stores no observations.
    pub sample_ratio: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { test_fraction: 0.2, sample_ratio: 0.1 }
    }
}

impl Config {
    /// Reads JSON or TOML, chosen by file extension.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
            }
            Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display())),
            _ => bail!("config file {} must end in .json or .toml", path.display()),
        }
    }

    /// One seed for every random stream.
    pub fn set_seed(&mut self, seed: u64) {
        self.scene.seed = seed;
        self.train.seed = seed;
        self.pipeline.channel.seed = seed;
        self.codebook.seed = seed;
    }
}
