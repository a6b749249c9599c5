//! JSON view of a block, shared by the service and its clients.

use std::collections::BTreeMap;

use cascade_core::{AnnotatedToken, Cell, CellStatus, CorpusBlock, Genre, Level, Sentence};
use serde::{Deserialize, Serialize};

use crate::{CellLoc, HarnessError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellDocument {
    pub value: Option<String>,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDocument {
    pub surface: String,
    pub cells: BTreeMap<Level, CellDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceDocument {
    pub id: String,
    pub genre: Genre,
    #[serde(default)]
    pub source: Vec<(String, String)>,
    #[serde(default)]
    pub align_err: bool,
    pub tokens: Vec<TokenDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDocument {
    pub index: usize,
    pub sentences: Vec<SentenceDocument>,
}

impl From<&CorpusBlock> for BlockDocument {
    fn from(block: &CorpusBlock) -> Self {
        let sentences = block
            .sentences
            .iter()
            .map(|s| SentenceDocument {
                id: s.id.clone(),
                genre: s.genre,
                source: s.source.clone(),
                align_err: s.align_err,
                tokens: s
                    .tokens
                    .iter()
                    .map(|t| TokenDocument {
                        surface: t.surface().to_string(),
                        cells: t
                            .cells()
                            .map(|(l, c)| {
                                (
                                    l,
                                    CellDocument {
                                        value: c.value().map(str::to_string),
                                        status: c.status(),
                                    },
                                )
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        BlockDocument {
            index: block.index,
            sentences,
        }
    }
}

impl BlockDocument {
    /// Rebuilds the block. Missing levels are empty cells.
    pub fn to_block(&self) -> Result<CorpusBlock, HarnessError> {
        let mut sentences = Vec::with_capacity(self.sentences.len());
        for s in &self.sentences {
            let mut tokens = Vec::with_capacity(s.tokens.len());
            for (i, t) in s.tokens.iter().enumerate() {
                let loc = |level| CellLoc {
                    block: self.index,
                    sentence: s.id.clone(),
                    token: Some(i),
                    level,
                };
                let mut token = AnnotatedToken::new(t.surface.clone()).map_err(|e| {
                    HarnessError::InvalidValue {
                        detail: e.to_string(),
                        loc: Some(loc(None)),
                    }
                })?;
                for (&level, c) in &t.cells {
                    let cell = match (&c.value, c.status) {
                        (None, CellStatus::Empty) => Cell::Empty,
                        (Some(v), status) if status != CellStatus::Empty => {
                            Cell::with_status(v.clone(), status)
                        }
                        _ => {
                            return Err(HarnessError::InvalidValue {
                                detail: format!("value and status {:?} disagree", c.status),
                                loc: Some(loc(Some(level))),
                            })
                        }
                    };
                    token
                        .set(level, cell)
                        .map_err(|e| HarnessError::InvalidValue {
                            detail: e.to_string(),
                            loc: Some(loc(Some(level))),
                        })?;
                }
                tokens.push(token);
            }
            let mut sentence = Sentence::new(s.id.clone(), s.genre, tokens);
            sentence.source = s.source.clone();
            sentence.align_err = s.align_err;
            sentences.push(sentence);
        }
        Ok(CorpusBlock {
            index: self.index,
            sentences,
        })
    }
}
