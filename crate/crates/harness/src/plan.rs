use std::fmt;
use std::path::PathBuf;

use cascade_core::dataset::{InputMode, Task};
use cascade_nn::{ModelConfig, TrainSchedule};
use serde::{Deserialize, Serialize};

use crate::eval::EvalReport;
use crate::HarnessError;

/// How auxiliary data enters a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Train from scratch on auxiliary sentences followed by the blocks.
    #[default]
    #[serde(alias = "CONCAT")]
    Concat,
    /// Start from a checkpoint trained on auxiliary data and fine-tune every
    /// parameter on the blocks.
    #[serde(alias = "RELOADED")]
    Reloaded,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Concat => "concat",
            Strategy::Reloaded => "reloaded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepPlan {
    pub step: usize,
    /// Auxiliary corpus file.
    #[serde(default)]
    pub aux: Option<PathBuf>,
    /// Blocks used as training data.
    #[serde(default)]
    pub annotated: Vec<usize>,
    /// Block to annotate.
    pub target: usize,
    #[serde(default)]
    pub strategy: Strategy,
    /// Checkpoint to fine-tune for [`Strategy::Reloaded`]; defaults to the
    /// step-0 model.
    #[serde(default)]
    pub pretrained: Option<String>,
    #[serde(default)]
    pub input_mode: InputMode,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
}

impl StepPlan {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| {
            Err(HarnessError::InvalidPlan(format!(
                "step {}: {m}",
                self.step
            )))
        };
        if self.annotated.contains(&self.target) {
            return bad(format!(
                "target block {} is already an annotated block",
                self.target
            ));
        }
        let mut seen = self.annotated.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.annotated.len() {
            return bad("annotated blocks repeat".into());
        }
        if self.annotated.is_empty() && self.aux.is_none() {
            return bad("no annotated blocks and no auxiliary corpus".into());
        }
        if self.strategy == Strategy::Reloaded && self.annotated.is_empty() {
            return bad("reloaded strategy needs annotated blocks to fine-tune on".into());
        }
        Ok(())
    }

    /// Model configuration with the plan's input mode applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut c = self.model.clone();
        c.input_mode = self.input_mode;
        if self.input_mode == InputMode::Ar {
            c.order.retain(|t| *t != Task::Ar);
        }
        c
    }

    pub fn pretrained_id(&self) -> String {
        self.pretrained.clone().unwrap_or_else(|| checkpoint_id(0))
    }
}

pub(crate) fn checkpoint_id(step: usize) -> String {
    format!("step_{step:03}")
}

/// Training-set size of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainTokens {
    /// Auxiliary plus primary tokens.
    pub total: usize,
    /// Tokens from annotated blocks.
    pub primary: usize,
}

impl TrainTokens {
    pub fn aux(&self) -> usize {
        self.total - self.primary
    }
}

/// `17,261 (4,870)`
impl fmt::Display for TrainTokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", thousands(self.total), thousands(self.primary))
    }
}

pub(crate) fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub target: usize,
    pub strategy: Strategy,
    pub train_tokens: TrainTokens,
    pub checkpoint: String,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub epochs: usize,
    /// Predictions scored against the target block; filled once a reference
    /// exists.
    pub eval: Option<EvalReport>,
}
