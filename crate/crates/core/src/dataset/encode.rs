use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::vocab::{Stream, VocabSet, Vocabulary, BOS, EOS, PAD, TOKSEP};
use super::Task;
use crate::corpus::is_sentinel;
use crate::{Level, Sentence};

/// What the encoder reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Raw Arabizi surface characters.
    #[default]
    Arabizi,
    /// CODA (Arabic-script) characters; the CODA target is dropped.
    Ar,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("sentence {sentence} token {token}: no gold {level} value")]
    MissingGold {
        sentence: String,
        token: usize,
        level: Level,
    },
}

impl EncodeError {
    pub fn code(&self) -> &'static str {
        "MISSING_GOLD"
    }
}

/// Symbols contributed by one cell value to `stream`.
///
/// Tag streams treat the whole value as one symbol. Character streams split
/// into characters, except that class sentinels stay atomic.
pub fn units_of(stream: Stream, value: &str) -> Vec<String> {
    if stream.is_tag_stream() || (stream != Stream::InputChars && is_sentinel(value)) {
        vec![value.to_string()]
    } else {
        value.chars().map(String::from).collect()
    }
}

/// A sentence as symbol-index sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub sentence_id: String,
    pub token_count: usize,
    /// BOS, units of token 1, TOKSEP, ..., units of token n, EOS.
    pub input: Vec<usize>,
    /// Same layout as `input`, one per task. A level with no gold value at
    /// all is encoded as an all-PAD sequence and contributes no loss.
    pub targets: BTreeMap<Task, Vec<usize>>,
}

fn wrap<'a>(
    vocab: &Vocabulary,
    stream: Stream,
    values: impl Iterator<Item = &'a str>,
) -> Vec<usize> {
    let mut seq = vec![BOS];
    for (i, v) in values.enumerate() {
        if i > 0 {
            seq.push(TOKSEP);
        }
        seq.extend(units_of(stream, v).iter().map(|u| vocab.encode(u)));
    }
    seq.push(EOS);
    seq
}

/// Encodes only the input side of a sentence (for inference).
pub fn encode_input(sentence: &Sentence, vocabs: &VocabSet) -> Result<Vec<usize>, EncodeError> {
    match vocabs.input_mode {
        InputMode::Arabizi => Ok(wrap(
            &vocabs.input,
            Stream::InputChars,
            sentence.tokens.iter().map(|t| t.surface()),
        )),
        InputMode::Ar => {
            let codas = sentence
                .tokens
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    t.value(Level::Coda)
                        .ok_or_else(|| EncodeError::MissingGold {
                            sentence: sentence.id.clone(),
                            token: i,
                            level: Level::Coda,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(wrap(&vocabs.input, Stream::CodaChars, codas.into_iter()))
        }
    }
}

/// Encodes the input and every task target of `sentence`.
pub fn encode_sentence(
    sentence: &Sentence,
    vocabs: &VocabSet,
    input_mode: InputMode,
) -> Result<EncodedExample, EncodeError> {
    debug_assert_eq!(input_mode, vocabs.input_mode);
    let input = encode_input(sentence, vocabs)?;
    let mut targets = BTreeMap::new();
    for (task, vocab) in &vocabs.targets {
        if input_mode == InputMode::Ar && *task == Task::Ar {
            continue;
        }
        let level = task.level();
        let gold: Vec<Option<&str>> = sentence
            .tokens
            .iter()
            .map(|t| t.cell(level).gold_value())
            .collect();
        let seq = if gold.iter().all(Option::is_none) {
            vec![PAD, PAD]
        } else if let Some(i) = gold.iter().position(Option::is_none) {
            return Err(EncodeError::MissingGold {
                sentence: sentence.id.clone(),
                token: i,
                level,
            });
        } else {
            wrap(vocab, task.stream(), gold.into_iter().flatten())
        };
        targets.insert(*task, seq);
    }
    Ok(EncodedExample {
        sentence_id: sentence.id.clone(),
        token_count: sentence.len(),
        input,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::vocab::UNK;
    use crate::synthetic::{excerpt_sentence, lexicon_token};
    use crate::{AnnotatedToken, Cell, Corpus, Genre};

    fn vocabs_for(sentences: &[Sentence], mode: InputMode) -> VocabSet {
        let tasks: Vec<Task> = Task::ALL
            .into_iter()
            .filter(|t| !(mode == InputMode::Ar && *t == Task::Ar))
            .collect();
        VocabSet::build(&Corpus::new(sentences.to_vec()), mode, &tasks)
    }

    #[test]
    fn single_token_input() {
        let s = Sentence::new("a", Genre::Forum, vec![lexicon_token("ena").unwrap()]);
        let v = vocabs_for(std::slice::from_ref(&s), InputMode::Arabizi);
        let ex = encode_sentence(&s, &v, InputMode::Arabizi).unwrap();
        let e = v.input.encode("e");
        let n = v.input.encode("n");
        let a = v.input.encode("a");
        assert_eq!(ex.input, vec![BOS, e, n, a, EOS]);
        assert_eq!(
            ex.targets[&Task::Cl],
            vec![BOS, v.target(Task::Cl).encode("arabizi"), EOS]
        );
    }

    #[test]
    fn two_tokens_one_separator() {
        let s = Sentence::new(
            "a",
            Genre::Forum,
            vec![lexicon_token("ena").unwrap(), lexicon_token("ma").unwrap()],
        );
        let v = vocabs_for(std::slice::from_ref(&s), InputMode::Arabizi);
        let ex = encode_sentence(&s, &v, InputMode::Arabizi).unwrap();
        assert_eq!(ex.input.iter().filter(|&&x| x == TOKSEP).count(), 1);
        let cl = &ex.targets[&Task::Cl];
        assert_eq!(cl.len(), 2 + 2 + 1);
        // foreign token: sentinel is one unit in the coda stream
        let ar = &ex.targets[&Task::Ar];
        assert_eq!(ar[ar.len() - 2], v.target(Task::Ar).encode("foreign"));
    }

    #[test]
    fn unseen_character_is_unk() {
        let train = Sentence::new("a", Genre::Forum, vec![lexicon_token("ena").unwrap()]);
        let v = vocabs_for(&[train], InputMode::Arabizi);
        let s = Sentence::new("b", Genre::Forum, vec![AnnotatedToken::new("ça").unwrap()]);
        let input = encode_input(&s, &v).unwrap();
        assert_eq!(input[1], UNK);
    }

    #[test]
    fn ar_mode_reads_coda_and_drops_target() {
        let s = excerpt_sentence("x");
        let v = vocabs_for(std::slice::from_ref(&s), InputMode::Ar);
        let ex = encode_sentence(&s, &v, InputMode::Ar).unwrap();
        assert!(!ex.targets.contains_key(&Task::Ar));
        assert_eq!(ex.input[1], v.input.encode("ا"));
        assert_eq!(ex.targets.len(), 4);
    }

    #[test]
    fn ar_mode_missing_coda() {
        let s = excerpt_sentence("x");
        let v = vocabs_for(std::slice::from_ref(&s), InputMode::Ar);
        let mut broken = s.clone();
        broken.tokens[0].set(Level::Coda, Cell::Empty).unwrap();
        assert_eq!(
            encode_sentence(&broken, &v, InputMode::Ar)
                .unwrap_err()
                .code(),
            "MISSING_GOLD"
        );
    }

    #[test]
    fn absent_level_is_all_pad() {
        let mut s = excerpt_sentence("x");
        for t in &mut s.tokens {
            t.set(Level::Lemma, Cell::Empty).unwrap();
        }
        let v = vocabs_for(&[excerpt_sentence("y")], InputMode::Arabizi);
        let ex = encode_sentence(&s, &v, InputMode::Arabizi).unwrap();
        assert_eq!(ex.targets[&Task::Lm], vec![PAD, PAD]);
        s.tokens[3].set(Level::Pos, Cell::Empty).unwrap();
        assert!(encode_sentence(&s, &v, InputMode::Arabizi).is_err());
    }
}
