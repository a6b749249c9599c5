use thiserror::Error;

use crate::{Corpus, CorpusBlock};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("sentence {sentence} has {len} tokens, more than the block target of {target}")]
    TargetTooSmall {
        sentence: String,
        len: usize,
        target: usize,
    },
}

impl BlockError {
    pub fn code(&self) -> &'static str {
        "TARGET_TOO_SMALL"
    }
}

/// Cuts the corpus into consecutive blocks of at least `target_tokens`
/// tokens each (the last block takes whatever remains). Sentences are never
/// split and keep their order.
pub fn split_blocks(corpus: &Corpus, target_tokens: usize) -> Result<Vec<CorpusBlock>, BlockError> {
    if let Some(s) = corpus.sentences.iter().find(|s| s.len() > target_tokens) {
        return Err(BlockError::TargetTooSmall {
            sentence: s.id.clone(),
            len: s.len(),
            target: target_tokens,
        });
    }
    let mut blocks = Vec::new();
    let mut current = CorpusBlock {
        index: 0,
        sentences: Vec::new(),
    };
    let mut count = 0;
    for sentence in &corpus.sentences {
        current.sentences.push(sentence.clone());
        count += sentence.len();
        if count >= target_tokens {
            let index = blocks.len() + 1;
            blocks.push(std::mem::replace(
                &mut current,
                CorpusBlock {
                    index,
                    sentences: Vec::new(),
                },
            ));
            count = 0;
        }
    }
    if !current.sentences.is_empty() {
        blocks.push(current);
    }
    Ok(blocks)
}
