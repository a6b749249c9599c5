//! Turning corpora into training material.

mod blocks;
mod combine;
mod encode;
mod split;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Level;

pub use blocks::{split_blocks, BlockError};
pub use combine::{concat_corpora, ConcatError};
pub use encode::{encode_input, encode_sentence, units_of, EncodeError, EncodedExample, InputMode};
pub use split::{
    make_splits, read_manifest, write_manifest, SplitError, SplitMode, SplitSpec, Splits,
};
pub use vocab::{
    build_vocabulary, Special, Stream, VocabError, VocabSet, Vocabulary, BOS, EOS, PAD, TOKSEP, UNK,
};

/// A prediction task, one per cascade decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Token classification.
    Cl,
    /// Lemmatization.
    Lm,
    /// CODA transliteration.
    Ar,
    /// Morpheme tokenization.
    Tk,
    Pos,
}

impl Task {
    /// Default cascade order.
    pub const ALL: [Task; 5] = [Task::Cl, Task::Lm, Task::Ar, Task::Tk, Task::Pos];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Cl => "cl",
            Task::Lm => "lm",
            Task::Ar => "ar",
            Task::Tk => "tk",
            Task::Pos => "pos",
        }
    }

    pub fn level(self) -> Level {
        match self {
            Task::Cl => Level::Class,
            Task::Lm => Level::Lemma,
            Task::Ar => Level::Coda,
            Task::Tk => Level::Tokenization,
            Task::Pos => Level::Pos,
        }
    }

    pub fn stream(self) -> Stream {
        match self {
            Task::Cl => Stream::ClassLabels,
            Task::Lm => Stream::LemmaChars,
            Task::Ar => Stream::CodaChars,
            Task::Tk => Stream::TokenizationChars,
            Task::Pos => Stream::PosTags,
        }
    }

    /// Whether each token contributes exactly one symbol to the target.
    pub fn is_tagging(self) -> bool {
        matches!(self, Task::Cl | Task::Pos)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}
