//! Data model and dataset plumbing for a multi-level annotated corpus of
//! Arabizi (romanized Tunisian Arabic) text.
//!
//! Every surface token carries five aligned annotation levels: a token
//! class, a CODA transliteration, a morpheme tokenization, a POS tag and a
//! lemma. Each cell is either gold, predicted by a model, or still empty.
//!
//! The [`corpus`] module owns the types, the TSV file format, validation and
//! descriptive statistics. The [`dataset`] module turns corpora into
//! training material: annotation blocks, train/dev/test splits,
//! vocabularies and character-level encodings.

pub mod corpus;
pub mod dataset;
pub mod synthetic;

pub use corpus::{
    AnnotatedToken, Cell, CellStatus, Corpus, CorpusBlock, CorpusError, CorpusStats, Genre, Level,
    Rule, Sentence, Severity, TokenClass, TokenError, ValidationReport, Violation,
};
