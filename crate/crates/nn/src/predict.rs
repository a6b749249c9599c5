//! Free-running inference mapped back onto tokens.

use std::collections::BTreeMap;

use cascade_core::dataset::{encode_input, EncodeError, Special, Task, Vocabulary, EOS, TOKSEP};
use cascade_core::Sentence;

use crate::model::Cascade;

/// Decoded values per task, one entry per token (`None` for EMPTY).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePrediction {
    pub values: BTreeMap<Task, Vec<Option<String>>>,
    /// Some task produced a unit count different from the token count.
    pub align_err: bool,
    pub length_cap_hit: bool,
}

/// Splits a generated sequence on TOKSEP and forces exactly `tokens` units.
///
/// Extra units are dropped and missing ones are EMPTY; the flag reports
/// whether any repair was needed. Special symbols other than TOKSEP are
/// ignored, and an empty unit is EMPTY.
pub fn align_units(
    symbols: &[usize],
    vocab: &Vocabulary,
    tokens: usize,
) -> (Vec<Option<String>>, bool) {
    let body = match symbols.iter().position(|&s| s == EOS) {
        Some(end) => &symbols[..end],
        None => symbols,
    };
    let mut units: Vec<Option<String>> = body
        .split(|&s| s == TOKSEP)
        .map(|unit| {
            let text: String = unit
                .iter()
                .filter(|&&s| s >= Special::COUNT)
                .filter_map(|&s| vocab.symbol(s))
                .collect();
            (!text.is_empty()).then_some(text)
        })
        .collect();
    let misaligned = units.len() != tokens;
    units.resize(tokens, None);
    (units, misaligned)
}

/// Predicts every enabled task for `sentences`, `batch_size` at a time.
pub fn predict_sentences(
    model: &Cascade,
    sentences: &[Sentence],
    batch_size: usize,
) -> Result<Vec<SentencePrediction>, EncodeError> {
    let inputs = sentences
        .iter()
        .map(|s| encode_input(s, &model.vocabs))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(sentences.len());
    for (chunk, sents) in inputs
        .chunks(batch_size.max(1))
        .zip(sentences.chunks(batch_size.max(1)))
    {
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        for (res, sentence) in model.decode_inputs(&refs).into_iter().zip(sents) {
            let mut values = BTreeMap::new();
            let mut align_err = false;
            for t in &res.tasks {
                let (units, bad) =
                    align_units(&t.predicted, model.vocabs.target(t.task), sentence.len());
                align_err |= bad;
                values.insert(t.task, units);
            }
            out.push(SentencePrediction {
                values,
                align_err,
                length_cap_hit: res.length_cap_hit(),
            });
        }
    }
    Ok(out)
}

pub fn predict_sentence(
    model: &Cascade,
    sentence: &Sentence,
) -> Result<SentencePrediction, EncodeError> {
    Ok(predict_sentences(model, std::slice::from_ref(sentence), 1)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cascade_core::dataset::Stream;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::empty(Stream::LemmaChars);
        for s in ["a", "b", "foreign"] {
            v.insert(s);
        }
        v
    }

    #[test]
    fn splits_on_separator() {
        let v = vocab();
        let (a, b, f) = (v.encode("a"), v.encode("b"), v.encode("foreign"));
        let (units, bad) = align_units(&[a, b, TOKSEP, f, TOKSEP, a, EOS], &v, 3);
        assert_eq!(
            units,
            vec![Some("ab".into()), Some("foreign".into()), Some("a".into())]
        );
        assert!(!bad);
    }

    #[test]
    fn no_separator_pads() {
        let v = vocab();
        let a = v.encode("a");
        let (units, bad) = align_units(&[a, a, EOS], &v, 3);
        assert_eq!(units, vec![Some("aa".into()), None, None]);
        assert!(bad);
    }

    #[test]
    fn extra_units_truncated() {
        let v = vocab();
        let a = v.encode("a");
        let (units, bad) = align_units(&[a, TOKSEP, a, TOKSEP, a], &v, 2);
        assert_eq!(units.len(), 2);
        assert!(bad);
    }

    #[test]
    fn empty_unit_is_empty() {
        let v = vocab();
        let a = v.encode("a");
        let (units, bad) = align_units(&[TOKSEP, a, EOS], &v, 2);
        assert_eq!(units, vec![None, Some("a".into())]);
        assert!(!bad);
    }
}
