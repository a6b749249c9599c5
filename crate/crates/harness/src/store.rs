use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cascade_core::corpus::{parse_corpus, serialize_corpus};
use cascade_core::{Corpus, CorpusBlock};
use serde::{Deserialize, Serialize};

use crate::corrections::MergeSummary;
use crate::eval::EvalReport;
use crate::plan::{StepPlan, StepRecord};
use crate::HarnessError;

/// One line of `journal.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum JournalEntry {
    /// A step finished training and wrote predictions onto its target.
    Annotated { plan: StepPlan, record: StepRecord },
    /// Human corrections were merged into a block.
    Corrected {
        block: usize,
        /// Step whose predictions the corrections answer, if any.
        step: Option<usize>,
        summary: MergeSummary,
        eval: Option<EvalReport>,
    },
}

/// Where a block stands in the annotate/correct cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum BlockState {
    /// Never annotated by a step.
    Fresh,
    /// Annotated by `step`; corrections not imported yet.
    AwaitingCorrections {
        step: usize,
    },
    Corrected,
}

/// Directory holding blocks, checkpoints, the journal and reports.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn block_name(index: usize) -> String {
    format!("block_{index:03}.tsv")
}

impl Store {
    /// Creates the directory layout and writes `blocks`.
    pub fn create(root: impl Into<PathBuf>, blocks: &[CorpusBlock]) -> Result<Self, HarnessError> {
        let store = Store { root: root.into() };
        for dir in ["blocks", "checkpoints", "reports"] {
            fs::create_dir_all(store.root.join(dir))?;
        }
        for b in blocks {
            store.write_block(b)?;
        }
        Ok(store)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let store = Store { root: root.into() };
        if !store.root.join("blocks").is_dir() {
            return Err(HarnessError::Corrupt(format!(
                "{} has no blocks directory",
                store.root.display()
            )));
        }
        fs::create_dir_all(store.root.join("checkpoints"))?;
        fs::create_dir_all(store.root.join("reports"))?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn block_path(&self, index: usize) -> PathBuf {
        self.root.join("blocks").join(block_name(index))
    }

    fn predictions_path(&self, index: usize) -> PathBuf {
        self.root
            .join("blocks")
            .join(format!("block_{index:03}.pred.tsv"))
    }

    pub fn checkpoint_path(&self, id: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{id}.ckpt"))
    }

    fn report_path(&self, step: usize) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("step_{step:03}.tsv"))
    }

    pub fn block_indices(&self) -> Result<Vec<usize>, HarnessError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("blocks"))? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(i) = name
                .strip_prefix("block_")
                .and_then(|n| n.strip_suffix(".tsv"))
            {
                if let Ok(i) = i.parse() {
                    out.push(i);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    fn read_block(&self, path: &Path, index: usize) -> Result<Option<CorpusBlock>, HarnessError> {
        match fs::read_to_string(path) {
            Ok(text) => Ok(Some(CorpusBlock {
                index,
                sentences: parse_corpus(&text)?.sentences,
            })),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn block(&self, index: usize) -> Result<CorpusBlock, HarnessError> {
        self.read_block(&self.block_path(index), index)?
            .ok_or(HarnessError::BlockNotFound(index))
    }

    pub fn write_block(&self, block: &CorpusBlock) -> Result<(), HarnessError> {
        write_atomic(
            &self.block_path(block.index),
            serialize_corpus(&block.to_corpus()).as_bytes(),
        )
    }

    /// Model output last written for the block.
    pub fn predictions(&self, index: usize) -> Result<Option<CorpusBlock>, HarnessError> {
        self.read_block(&self.predictions_path(index), index)
    }

    pub(crate) fn write_predictions(&self, block: &CorpusBlock) -> Result<(), HarnessError> {
        write_atomic(
            &self.predictions_path(block.index),
            serialize_corpus(&block.to_corpus()).as_bytes(),
        )
    }

    /// Concatenation of the given blocks, in the given order.
    pub fn corpus_of(&self, indices: &[usize]) -> Result<Corpus, HarnessError> {
        let mut sentences = Vec::new();
        for &i in indices {
            sentences.extend(self.block(i)?.sentences);
        }
        Ok(Corpus::new(sentences))
    }

    pub fn journal(&self) -> Result<Vec<JournalEntry>, HarnessError> {
        let text = match fs::read_to_string(self.root.join("journal.jsonl")) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| HarnessError::Corrupt(format!("journal line {}: {e}", i + 1)))
            })
            .collect()
    }

    pub(crate) fn append(&self, entry: &JournalEntry) -> Result<(), HarnessError> {
        let mut line = serde_json::to_string(entry).expect("journal entries serialize");
        line.push('\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("journal.jsonl"))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    /// Latest record of every step, with evaluations from later corrections
    /// folded in.
    pub fn records(&self) -> Result<Vec<StepRecord>, HarnessError> {
        Ok(self.replay()?.0.into_values().map(|(_, r)| r).collect())
    }

    /// Plan and record of a journaled step.
    pub fn step(&self, step: usize) -> Result<Option<(StepPlan, StepRecord)>, HarnessError> {
        Ok(self.replay()?.0.remove(&step))
    }

    #[allow(clippy::type_complexity)]
    fn replay(
        &self,
    ) -> Result<
        (
            BTreeMap<usize, (StepPlan, StepRecord)>,
            BTreeMap<usize, BlockState>,
        ),
        HarnessError,
    > {
        let mut steps = BTreeMap::new();
        let mut blocks = BTreeMap::new();
        for entry in self.journal()? {
            match entry {
                JournalEntry::Annotated { plan, record } => {
                    blocks.insert(
                        record.target,
                        BlockState::AwaitingCorrections { step: record.step },
                    );
                    steps.insert(record.step, (plan, record));
                }
                JournalEntry::Corrected {
                    block, step, eval, ..
                } => {
                    blocks.insert(block, BlockState::Corrected);
                    if let Some((_, record)) = step.and_then(|s| steps.get_mut(&s)) {
                        if eval.is_some() {
                            record.eval = eval;
                        }
                    }
                }
            }
        }
        Ok((steps, blocks))
    }

    pub fn block_state(&self, index: usize) -> Result<BlockState, HarnessError> {
        Ok(self
            .replay()?
            .1
            .get(&index)
            .copied()
            .unwrap_or(BlockState::Fresh))
    }

    pub fn report(&self, step: usize) -> Result<Option<String>, HarnessError> {
        match fs::read_to_string(self.report_path(step)) {
            Ok(t) => Ok(Some(t)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub(crate) fn write_report(&self, step: usize, text: &str) -> Result<(), HarnessError> {
        write_atomic(&self.report_path(step), text.as_bytes())
    }

    pub(crate) fn write_campaign_report(&self, text: &str) -> Result<(), HarnessError> {
        write_atomic(
            &self.root.join("reports").join("campaign.tsv"),
            text.as_bytes(),
        )
    }
}
