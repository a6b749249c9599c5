use std::collections::BTreeSet;

use thiserror::Error;

use crate::{Corpus, Level};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConcatError {
    #[error("annotation levels differ: auxiliary has {aux:?}, primary has {primary:?}")]
    SchemaMismatch {
        aux: BTreeSet<Level>,
        primary: BTreeSet<Level>,
    },
}

impl ConcatError {
    pub fn code(&self) -> &'static str {
        "SCHEMA_MISMATCH"
    }
}

/// Auxiliary sentences followed by primary sentences. No deduplication.
pub fn concat_corpora(aux: &Corpus, primary: &Corpus) -> Result<Corpus, ConcatError> {
    if !aux.is_empty() && !primary.is_empty() {
        let (a, p) = (aux.schema(), primary.schema());
        if a != p {
            return Err(ConcatError::SchemaMismatch { aux: a, primary: p });
        }
    }
    let mut sentences = Vec::with_capacity(aux.sentences.len() + primary.sentences.len());
    sentences.extend(aux.sentences.iter().cloned());
    sentences.extend(primary.sentences.iter().cloned());
    Ok(Corpus::new(sentences))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{corpus_with_token_count, strip_level};

    #[test]
    fn step_one_accounting() {
        let aux = corpus_with_token_count(12_391, 3);
        let primary = corpus_with_token_count(4_870, 4);
        let c = concat_corpora(&aux, &primary).unwrap();
        assert_eq!(c.token_count(), 17_261);
        assert_eq!(c.sentences[0], aux.sentences[0]);
        assert_eq!(c.sentences[aux.sentences.len()], primary.sentences[0]);
    }

    #[test]
    fn step_three_drift_against_published_count() {
        let aux = corpus_with_token_count(12_391, 3);
        let primary = corpus_with_token_count(14_870, 5);
        let total = concat_corpora(&aux, &primary).unwrap().token_count();
        assert_eq!(total, 27_261);
        // Published figure is 27,270: nine tokens of bookkeeping drift.
        assert_eq!(27_270 - total as i64, 9);
    }

    #[test]
    fn empty_primary_is_identity() {
        let aux = corpus_with_token_count(100, 1);
        assert_eq!(concat_corpora(&aux, &Corpus::default()).unwrap(), aux);
    }

    #[test]
    fn schema_mismatch() {
        let aux = strip_level(&corpus_with_token_count(40, 1), Level::Lemma);
        let primary = corpus_with_token_count(40, 2);
        assert_eq!(
            concat_corpora(&aux, &primary).unwrap_err().code(),
            "SCHEMA_MISMATCH"
        );
    }
}
