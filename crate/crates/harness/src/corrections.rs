use std::collections::BTreeMap;

use cascade_core::corpus::validate_corpus;
use cascade_core::dataset::Task;
use cascade_core::{Cell, CellStatus, CorpusBlock, Level};
use serde::{Deserialize, Serialize};

use crate::campaign::accounting_table;
use crate::eval::evaluate;
use crate::store::{JournalEntry, Store};
use crate::{check_shape, CellLoc, HarnessError};

/// Changed cells per task after a merge.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergeSummary {
    pub block: usize,
    pub changed: BTreeMap<Task, usize>,
    pub total: usize,
}

/// A single cell set by the annotator; `None` clears it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellEdit {
    pub sentence: String,
    pub token: usize,
    pub level: Level,
    pub value: Option<String>,
}

fn task_of(level: Level) -> Task {
    Task::ALL
        .into_iter()
        .find(|t| t.level() == level)
        .expect("every level has a task")
}

/// Applies `edits` to a copy of `block`; every edited cell becomes gold.
pub fn apply_edits(block: &CorpusBlock, edits: &[CellEdit]) -> Result<CorpusBlock, HarnessError> {
    let mut out = block.clone();
    for e in edits {
        let loc = Some(CellLoc {
            block: block.index,
            sentence: e.sentence.clone(),
            token: Some(e.token),
            level: Some(e.level),
        });
        let token = out
            .sentences
            .iter_mut()
            .find(|s| s.id == e.sentence)
            .and_then(|s| s.tokens.get_mut(e.token))
            .ok_or_else(|| HarnessError::ShapeMismatch {
                detail: "edit outside the block".into(),
                loc: loc.clone(),
            })?;
        let cell = e.value.as_deref().map_or(Cell::Empty, Cell::gold);
        token
            .set(e.level, cell)
            .map_err(|err| HarnessError::InvalidValue {
                detail: err.to_string(),
                loc,
            })?;
    }
    Ok(out)
}

/// Merges an annotator's copy of a block into the store.
///
/// A cell whose value changed becomes gold (or empty). A predicted cell
/// resubmitted as gold with the same value is a confirmation and also
/// becomes gold. Everything else keeps its stored state. A sentence keeps
/// its misalignment flag only while the submission keeps it and predicted
/// cells remain. The merged block
/// must satisfy every corpus invariant, otherwise nothing is written.
pub fn import_corrections(
    index: usize,
    corrected: &CorpusBlock,
    store: &Store,
) -> Result<MergeSummary, HarnessError> {
    let current = store.block(index)?;
    check_shape(&current, corrected)?;
    let mut merged = current.clone();
    let mut summary = MergeSummary {
        block: index,
        changed: Task::ALL.iter().map(|t| (*t, 0)).collect(),
        total: 0,
    };
    for (s, (ms, cs)) in current
        .sentences
        .iter()
        .zip(merged.sentences.iter_mut().zip(&corrected.sentences))
    {
        ms.align_err = cs.align_err;
        for (i, (mt, ct)) in ms.tokens.iter_mut().zip(&cs.tokens).enumerate() {
            for level in Level::ALL {
                let (old, new) = (s.tokens[i].cell(level), ct.cell(level));
                let cell = if old.value() != new.value() {
                    new.value().map_or(Cell::Empty, Cell::gold)
                } else if old.status() == CellStatus::Predicted && new.is_gold() {
                    new.clone()
                } else {
                    continue;
                };
                mt.set(level, cell)
                    .map_err(|err| HarnessError::InvalidValue {
                        detail: err.to_string(),
                        loc: Some(CellLoc {
                            block: index,
                            sentence: s.id.clone(),
                            token: Some(i),
                            level: Some(level),
                        }),
                    })?;
                *summary.changed.entry(task_of(level)).or_default() += 1;
                summary.total += 1;
            }
        }
    }
    for s in &mut merged.sentences {
        s.align_err &= s
            .tokens
            .iter()
            .any(|t| t.cells().any(|(_, c)| c.status() == CellStatus::Predicted));
    }
    if let Some(v) = validate_corpus(&merged.to_corpus())
        .violations
        .into_iter()
        .next()
    {
        return Err(HarnessError::Invariant {
            rule: v.rule,
            detail: v.detail,
            loc: Some(CellLoc {
                block: index,
                sentence: v.sentence,
                token: v.token,
                level: v.level,
            }),
        });
    }
    store.write_block(&merged)?;

    // corrections answer the latest step that annotated this block
    let step = store
        .records()?
        .iter()
        .rev()
        .find(|r| r.target == index)
        .map(|r| r.step);
    let eval = match store.predictions(index)? {
        Some(p) => Some(evaluate(&p, &merged)?),
        None => None,
    };
    store.append(&JournalEntry::Corrected {
        block: index,
        step,
        summary: summary.clone(),
        eval,
    })?;
    if let Some((_, record)) = step.map(|s| store.step(s)).transpose()?.flatten() {
        store.write_report(
            record.step,
            &accounting_table(std::slice::from_ref(&record)),
        )?;
    }
    Ok(summary)
}
