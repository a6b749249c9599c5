//! Token-level exact-match scoring of a predicted block against a reference.

use std::collections::BTreeMap;

use cascade_core::dataset::Task;
use cascade_core::CorpusBlock;
use serde::{Deserialize, Serialize};

use crate::{check_shape, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskScore {
    pub correct: usize,
    /// Tokens whose reference cell is filled.
    pub evaluated: usize,
}

impl TaskScore {
    /// Percentage rounded half-up to two decimals; `None` when nothing was
    /// evaluated.
    pub fn accuracy(&self) -> Option<f64> {
        if self.evaluated == 0 {
            return None;
        }
        let n = self.evaluated as u128;
        let hundredths = (self.correct as u128 * 20_000 + n) / (2 * n);
        Some(hundredths as f64 / 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<Task, TaskScore>,
    pub tokens: usize,
    /// Predicted sentences flagged as misaligned.
    pub align_err: usize,
}

impl EvalReport {
    pub fn accuracy(&self, task: Task) -> Option<f64> {
        self.tasks.get(&task).and_then(TaskScore::accuracy)
    }

    /// `12.34` or `-` when the task has no reference.
    pub fn display(&self, task: Task) -> String {
        self.accuracy(task)
            .map_or_else(|| "-".to_string(), |a| format!("{a:.2}"))
    }
}

/// Scores `predictions` against `reference` for every task.
///
/// A token counts as correct iff the two values are the same string; an
/// empty reference cell leaves the token out of that task's denominator, and
/// an empty prediction against a filled reference is wrong. Cell status is
/// not consulted.
pub fn evaluate(
    predictions: &CorpusBlock,
    reference: &CorpusBlock,
) -> Result<EvalReport, HarnessError> {
    check_shape(reference, predictions)?;
    let mut report = EvalReport {
        tokens: reference.token_count(),
        align_err: predictions.sentences.iter().filter(|s| s.align_err).count(),
        ..Default::default()
    };
    for task in Task::ALL {
        let level = task.level();
        let mut score = TaskScore::default();
        for (p, g) in predictions.sentences.iter().zip(&reference.sentences) {
            for (pt, gt) in p.tokens.iter().zip(&g.tokens) {
                if let Some(gold) = gt.value(level) {
                    score.evaluated += 1;
                    score.correct += usize::from(pt.value(level) == Some(gold));
                }
            }
        }
        report.tasks.insert(task, score);
    }
    Ok(report)
}
