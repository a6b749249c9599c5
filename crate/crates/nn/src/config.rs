use std::collections::BTreeSet;

use cascade_core::dataset::{InputMode, Task};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Bidirectional LSTM encoder, LSTM decoders with input feeding.
    #[default]
    #[serde(alias = "RECURRENT", alias = "lstm")]
    Recurrent,
    /// Pre-norm transformer encoder and decoders.
    #[serde(alias = "SELF_ATTENTION", alias = "transformer")]
    SelfAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    #[serde(alias = "XAVIER")]
    Xavier,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, `N(0, 1)` embeddings.
    #[serde(alias = "BASELINE_DEFAULT")]
    BaselineDefault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub embedding: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Attention heads inside the self-attention backbone.
    pub heads: usize,
    /// Feed-forward width as a multiple of `hidden` (self-attention only).
    pub ffn_multiplier: usize,
    /// Decoder order; also the set of enabled tasks.
    pub order: Vec<Task>,
    pub input_mode: InputMode,
    pub dropout: f64,
    pub seed: u64,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Recurrent,
            embedding: 64,
            hidden: 128,
            encoder_layers: 2,
            decoder_layers: 1,
            heads: 1,
            ffn_multiplier: 4,
            order: Task::ALL.to_vec(),
            input_mode: InputMode::Arabizi,
            dropout: 0.1,
            seed: 1,
            init: InitScheme::Xavier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("no task enabled")]
    NoTasks,
    #[error("task {0} appears twice in the decoder order")]
    DuplicateTask(Task),
    #[error("the cl decoder must come first when enabled")]
    ClassNotFirst,
    #[error("the ar task cannot be enabled when the input is already CODA")]
    ArWithArInput,
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("the recurrent backbone needs an even hidden size, got {0}")]
    OddHidden(usize),
    #[error("hidden size {hidden} is not divisible by {heads} heads")]
    Heads { hidden: usize, heads: usize },
    #[error("dropout must lie in [0, 1), got {0}")]
    Dropout(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        "INVALID_CONFIG"
    }
}

impl ModelConfig {
    /// Desk-scale defaults with tasks that fit `mode`.
    pub fn for_input(mode: InputMode) -> Self {
        let mut c = Self {
            input_mode: mode,
            ..Self::default()
        };
        if mode == InputMode::Ar {
            c.order.retain(|t| *t != Task::Ar);
        }
        c
    }

    /// A very small cascade, used for finite-difference checks.
    pub fn tiny(backbone: Backbone) -> Self {
        Self {
            backbone,
            embedding: 3,
            hidden: 6,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: if backbone == Backbone::SelfAttention {
                2
            } else {
                1
            },
            ffn_multiplier: 2,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.order.is_empty() {
            return Err(ConfigError::NoTasks);
        }
        let mut seen = BTreeSet::new();
        for t in &self.order {
            if !seen.insert(*t) {
                return Err(ConfigError::DuplicateTask(*t));
            }
        }
        if seen.contains(&Task::Cl) && self.order[0] != Task::Cl {
            return Err(ConfigError::ClassNotFirst);
        }
        if self.input_mode == InputMode::Ar && seen.contains(&Task::Ar) {
            return Err(ConfigError::ArWithArInput);
        }
        for (name, v) in [
            ("embedding", self.embedding),
            ("hidden", self.hidden),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("heads", self.heads),
            ("ffn_multiplier", self.ffn_multiplier),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        match self.backbone {
            Backbone::Recurrent if !self.hidden.is_multiple_of(2) => {
                return Err(ConfigError::OddHidden(self.hidden))
            }
            Backbone::SelfAttention if !self.hidden.is_multiple_of(self.heads) => {
                return Err(ConfigError::Heads {
                    hidden: self.hidden,
                    heads: self.heads,
                })
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Dropout(self.dropout.to_string()));
        }
        Ok(())
    }

    /// Position of `task` in the cascade, 0-based.
    pub fn position(&self, task: Task) -> Option<usize> {
        self.order.iter().position(|t| *t == task)
    }
}
