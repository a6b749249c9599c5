//! The iterative annotation procedure: train on the blocks annotated so far,
//! predict the next block, take in the human corrections, repeat.
//!
//! All state lives in a [`Store`] directory:
//!
//! ```text
//! blocks/block_000.tsv        current cells of each block
//! blocks/block_000.pred.tsv   last model output for the block
//! checkpoints/step_000.ckpt   model trained at each step
//! journal.jsonl               append-only event log
//! reports/step_000.tsv        accounting and accuracy per step
//! ```

mod campaign;
mod corrections;
mod doc;
mod eval;
mod plan;
mod step;
mod store;

use cascade_core::dataset::{ConcatError, EncodeError};
use cascade_core::{CorpusBlock, CorpusError, Level, Rule};
use cascade_nn::{CheckpointError, ModelError, TrainError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use campaign::{accounting_table, run_campaign, run_campaign_with, CampaignOutcome};
pub use corrections::{apply_edits, import_corrections, CellEdit, MergeSummary};
pub use doc::{BlockDocument, CellDocument, SentenceDocument, TokenDocument};
pub use eval::{evaluate, EvalReport, TaskScore};
pub use plan::{StepPlan, StepRecord, Strategy, TrainTokens};
pub use step::{
    repair_predictions, run_annotation_step, run_annotation_step_with, train_step, StepProgress,
    TrainedStep,
};
pub use store::{BlockState, JournalEntry, Store};

/// Coordinates of a single cell inside the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellLoc {
    pub block: usize,
    pub sentence: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("plan discontinuity: {0}")]
    PlanDiscontinuity(String),
    #[error("block {0} not found")]
    BlockNotFound(usize),
    #[error("block {block}: sentence {sentence} token {token}: {level} is not gold")]
    MissingGold {
        block: usize,
        sentence: String,
        token: usize,
        level: Level,
    },
    #[error("block shape mismatch: {detail}")]
    ShapeMismatch {
        detail: String,
        loc: Option<CellLoc>,
    },
    #[error("{}: {detail}", rule.name())]
    Invariant {
        rule: Rule,
        detail: String,
        loc: Option<CellLoc>,
    },
    #[error("invalid cell value: {detail}")]
    InvalidValue {
        detail: String,
        loc: Option<CellLoc>,
    },
    #[error("store is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Concat(#[from] ConcatError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::InvalidPlan(_) => "INVALID_PLAN",
            HarnessError::PlanDiscontinuity(_) => "PLAN_DISCONTINUITY",
            HarnessError::BlockNotFound(_) => "NOT_FOUND",
            HarnessError::MissingGold { .. } => "MISSING_GOLD",
            HarnessError::ShapeMismatch { .. } => "BLOCK_SHAPE_MISMATCH",
            HarnessError::Invariant { rule, .. } => rule.name(),
            HarnessError::InvalidValue { .. } => "INVALID_VALUE",
            HarnessError::Corrupt(_) => "STORE_CORRUPT",
            HarnessError::Corpus(e) => e.code(),
            HarnessError::Concat(e) => e.code(),
            HarnessError::Encode(e) => e.code(),
            HarnessError::Checkpoint(e) => e.code(),
            HarnessError::Model(_) => "INVALID_CONFIG",
            HarnessError::Train(e) => e.code(),
            HarnessError::Io(_) => "IO_ERROR",
        }
    }

    pub fn loc(&self) -> Option<&CellLoc> {
        match self {
            HarnessError::ShapeMismatch { loc, .. }
            | HarnessError::Invariant { loc, .. }
            | HarnessError::InvalidValue { loc, .. } => loc.as_ref(),
            _ => None,
        }
    }
}

/// Same sentence ids, surfaces and token counts, in the same order.
pub(crate) fn check_shape(expected: &CorpusBlock, found: &CorpusBlock) -> Result<(), HarnessError> {
    let block = expected.index;
    if expected.sentences.len() != found.sentences.len() {
        return Err(HarnessError::ShapeMismatch {
            detail: format!(
                "{} sentences expected, {} found",
                expected.sentences.len(),
                found.sentences.len()
            ),
            loc: None,
        });
    }
    for (e, f) in expected.sentences.iter().zip(&found.sentences) {
        let loc = |token| {
            Some(CellLoc {
                block,
                sentence: e.id.clone(),
                token,
                level: None,
            })
        };
        if e.id != f.id {
            return Err(HarnessError::ShapeMismatch {
                detail: format!("sentence {} expected, {} found", e.id, f.id),
                loc: loc(None),
            });
        }
        if e.len() != f.len() {
            return Err(HarnessError::ShapeMismatch {
                detail: format!(
                    "sentence {}: {} tokens expected, {} found",
                    e.id,
                    e.len(),
                    f.len()
                ),
                loc: loc(None),
            });
        }
        if let Some(t) = e
            .tokens
            .iter()
            .zip(&f.tokens)
            .position(|(a, b)| a.surface() != b.surface())
        {
            return Err(HarnessError::ShapeMismatch {
                detail: format!("sentence {} token {t}: surface differs", e.id),
                loc: loc(Some(t)),
            });
        }
    }
    Ok(())
}
