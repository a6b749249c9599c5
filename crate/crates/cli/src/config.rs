//! The TOML configuration file.
//!
//! ```toml
//! [model]            # model hyperparameters
//! [train]            # training schedule
//! [split]            # ratios, mode, seed
//! [blocks]           # target = tokens per annotation block
//! [[plan]]           # one table per annotation step
//! ```
//!
//! A plan without its own `model` or `schedule` table takes the top-level
//! `[model]` and `[train]` sections.

use std::path::{Path, PathBuf};

use cascade_core::dataset::{SplitMode, SplitSpec};
use cascade_harness::StepPlan;
use cascade_nn::{ModelConfig, TrainSchedule};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(#[from] toml::de::Error),
    #[error("plan {index}: {source}")]
    Plan {
        index: usize,
        source: serde_json::Error,
    },
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        "INVALID_CONFIG"
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitSection {
    ratios: [f64; 3],
    mode: SplitMode,
    seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            ratios: s.ratios,
            mode: s.mode,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BlocksSection {
    target: usize,
}

impl Default for BlocksSection {
    fn default() -> Self {
        Self { target: 5000 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    model: ModelConfig,
    train: TrainSchedule,
    split: SplitSection,
    blocks: BlocksSection,
    plan: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainSchedule,
    pub split: SplitSpec,
    /// Tokens per annotation block.
    pub block_tokens: usize,
    pub plans: Vec<StepPlan>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainSchedule::default(),
            split: SplitSpec::default(),
            block_tokens: BlocksSection::default().target,
            plans: Vec::new(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut config = Config {
            model: raw.model,
            train: raw.train,
            split: SplitSpec {
                ratios: raw.split.ratios,
                mode: raw.split.mode,
                seed: raw.split.seed,
            },
            block_tokens: raw.blocks.target,
            plans: Vec::new(),
        };
        for (index, value) in raw.plan.into_iter().enumerate() {
            let plan = config
                .plan_from_json(value)
                .map_err(|source| ConfigError::Plan { index, source })?;
            config.plans.push(plan);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Replaces every seed: model, split and each plan's model.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.split.seed = seed;
        for p in &mut self.plans {
            p.model.seed = seed;
        }
        self
    }

    /// Reads a plan, filling a missing `model` or `schedule` from this
    /// configuration.
    pub fn plan_from_json(
        &self,
        mut value: serde_json::Value,
    ) -> Result<StepPlan, serde_json::Error> {
        if let Some(table) = value.as_object_mut() {
            if !table.contains_key("model") {
                table.insert("model".into(), serde_json::to_value(&self.model)?);
            }
            if !table.contains_key("schedule") {
                table.insert("schedule".into(), serde_json::to_value(&self.train)?);
            }
        }
        serde_json::from_value(value)
    }

    pub fn plan(&self, step: usize) -> Option<&StepPlan> {
        self.plans.iter().find(|p| p.step == step)
    }
}
