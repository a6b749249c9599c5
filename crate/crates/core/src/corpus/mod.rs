//! Annotated corpus types.

mod format;
mod stats;
mod validate;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{parse_corpus, serialize_corpus, CorpusError, EMPTY_PLACEHOLDER};
pub use stats::{compute_stats, CorpusStats, StatsRow};
pub use validate::{validate_corpus, Rule, Severity, ValidationReport, Violation};

/// Token class of a surface token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenClass {
    Arabizi,
    Foreign,
    Emotag,
}

impl TokenClass {
    pub const ALL: [TokenClass; 3] = [TokenClass::Arabizi, TokenClass::Foreign, TokenClass::Emotag];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenClass::Arabizi => "arabizi",
            TokenClass::Foreign => "foreign",
            TokenClass::Emotag => "emotag",
        }
    }

    /// Value every downstream level must carry for a non-arabizi token.
    pub fn sentinel(self) -> Option<&'static str> {
        match self {
            TokenClass::Arabizi => None,
            other => Some(other.as_str()),
        }
    }
}

impl fmt::Display for TokenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid token class {0:?}")]
pub struct InvalidClass(pub String);

impl FromStr for TokenClass {
    type Err = InvalidClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arabizi" => Ok(TokenClass::Arabizi),
            "foreign" => Ok(TokenClass::Foreign),
            "emotag" => Ok(TokenClass::Emotag),
            other => Err(InvalidClass(other.to_string())),
        }
    }
}

/// Returns true if `value` is one of the class sentinels (`foreign`, `emotag`).
pub fn is_sentinel(value: &str) -> bool {
    value == "foreign" || value == "emotag"
}

/// Textual genre of a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Forum,
    Social,
    Blog,
    Rap,
}

impl Genre {
    pub const ALL: [Genre; 4] = [Genre::Forum, Genre::Social, Genre::Blog, Genre::Rap];

    pub fn as_str(self) -> &'static str {
        match self {
            Genre::Forum => "forum",
            Genre::Social => "social",
            Genre::Blog => "blog",
            Genre::Rap => "rap",
        }
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Genre {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Genre::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown genre {s:?}"))
    }
}

/// One of the five annotation levels attached to a surface token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Class,
    Coda,
    Tokenization,
    Pos,
    Lemma,
}

impl Level {
    /// Column order of the TSV format.
    pub const ALL: [Level; 5] = [
        Level::Class,
        Level::Coda,
        Level::Tokenization,
        Level::Pos,
        Level::Lemma,
    ];
    pub const DOWNSTREAM: [Level; 4] = [Level::Coda, Level::Tokenization, Level::Pos, Level::Lemma];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Class => "class",
            Level::Coda => "coda",
            Level::Tokenization => "tokenization",
            Level::Pos => "pos",
            Level::Lemma => "lemma",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown annotation level {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Gold,
    Predicted,
    Empty,
}

impl CellStatus {
    pub fn flag(self) -> char {
        match self {
            CellStatus::Gold => 'G',
            CellStatus::Predicted => 'P',
            CellStatus::Empty => 'E',
        }
    }

    pub fn from_flag(c: char) -> Option<Self> {
        match c {
            'G' => Some(CellStatus::Gold),
            'P' => Some(CellStatus::Predicted),
            'E' => Some(CellStatus::Empty),
            _ => None,
        }
    }
}

/// A single annotation cell: a value together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum Cell {
    #[default]
    Empty,
    Gold(String),
    Predicted(String),
}

impl Cell {
    pub fn gold(value: impl Into<String>) -> Self {
        Cell::Gold(value.into())
    }

    pub fn predicted(value: impl Into<String>) -> Self {
        Cell::Predicted(value.into())
    }

    pub fn with_status(value: impl Into<String>, status: CellStatus) -> Self {
        match status {
            CellStatus::Gold => Cell::Gold(value.into()),
            CellStatus::Predicted => Cell::Predicted(value.into()),
            CellStatus::Empty => Cell::Empty,
        }
    }

    pub fn value(&self) -> Option<&str> {
        match self {
            Cell::Empty => None,
            Cell::Gold(v) | Cell::Predicted(v) => Some(v),
        }
    }

    pub fn status(&self) -> CellStatus {
        match self {
            Cell::Empty => CellStatus::Empty,
            Cell::Gold(_) => CellStatus::Gold,
            Cell::Predicted(_) => CellStatus::Predicted,
        }
    }

    pub fn is_gold(&self) -> bool {
        matches!(self, Cell::Gold(_))
    }

    pub fn gold_value(&self) -> Option<&str> {
        match self {
            Cell::Gold(v) => Some(v),
            _ => None,
        }
    }
}

/// Lexical problems detected when building a token.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("surface form is empty")]
    EmptySurface,
    #[error("{field} contains a forbidden control character (tab or line break): {value:?}")]
    ControlCharacter { field: &'static str, value: String },
    #[error("{level} value is empty; use an empty cell instead")]
    EmptyValue { level: Level },
    #[error("{level} value {EMPTY_PLACEHOLDER:?} is reserved for empty cells")]
    ReservedPlaceholder { level: Level },
    #[error(transparent)]
    InvalidClass(#[from] InvalidClass),
}

fn check_text(field: &'static str, value: &str) -> Result<(), TokenError> {
    if value.chars().any(|c| matches!(c, '\t' | '\n' | '\r')) {
        return Err(TokenError::ControlCharacter {
            field,
            value: value.to_string(),
        });
    }
    Ok(())
}

/// A surface token with its five annotation cells.
///
/// Construction rejects values the TSV format cannot represent, so a token
/// that exists can always be serialized.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnnotatedToken {
    surface: String,
    cells: [Cell; 5],
}

impl AnnotatedToken {
    /// A token with every annotation level empty.
    pub fn new(surface: impl Into<String>) -> Result<Self, TokenError> {
        let surface = surface.into();
        if surface.is_empty() {
            return Err(TokenError::EmptySurface);
        }
        check_text("surface", &surface)?;
        Ok(Self {
            surface,
            cells: Default::default(),
        })
    }

    /// A token whose five levels are all gold.
    pub fn gold(
        surface: &str,
        class: TokenClass,
        coda: &str,
        tokenization: &str,
        pos: &str,
        lemma: &str,
    ) -> Result<Self, TokenError> {
        let mut token = Self::new(surface)?;
        token.set(Level::Class, Cell::gold(class.as_str()))?;
        token.set(Level::Coda, Cell::gold(coda))?;
        token.set(Level::Tokenization, Cell::gold(tokenization))?;
        token.set(Level::Pos, Cell::gold(pos))?;
        token.set(Level::Lemma, Cell::gold(lemma))?;
        Ok(token)
    }

    /// A gold non-arabizi token carrying the class sentinel on every level.
    pub fn sentinel(surface: &str, class: TokenClass) -> Result<Self, TokenError> {
        let s = class.sentinel().unwrap_or(EMPTY_PLACEHOLDER);
        Self::gold(surface, class, s, s, s, s)
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn cell(&self, level: Level) -> &Cell {
        &self.cells[level.index()]
    }

    pub fn cells(&self) -> impl Iterator<Item = (Level, &Cell)> {
        Level::ALL.into_iter().map(move |l| (l, self.cell(l)))
    }

    /// Parsed token class, if the class cell is filled.
    pub fn class(&self) -> Option<TokenClass> {
        self.cell(Level::Class)
            .value()
            .map(|v| v.parse().expect("class validated on set"))
    }

    pub fn value(&self, level: Level) -> Option<&str> {
        self.cell(level).value()
    }

    pub fn set(&mut self, level: Level, cell: Cell) -> Result<(), TokenError> {
        if let Some(v) = cell.value() {
            if v.is_empty() {
                return Err(TokenError::EmptyValue { level });
            }
            if v == EMPTY_PLACEHOLDER {
                return Err(TokenError::ReservedPlaceholder { level });
            }
            check_text(level.as_str(), v)?;
            if level == Level::Class {
                v.parse::<TokenClass>()?;
            }
        }
        self.cells[level.index()] = cell;
        Ok(())
    }

    pub fn with(mut self, level: Level, cell: Cell) -> Result<Self, TokenError> {
        self.set(level, cell)?;
        Ok(self)
    }
}

/// A sentence with its genre and source metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub genre: Genre,
    /// Free-form key/value pairs in insertion order.
    pub source: Vec<(String, String)>,
    pub tokens: Vec<AnnotatedToken>,
    /// Set when model output could not be aligned one unit per token.
    pub align_err: bool,
}

impl Sentence {
    pub fn new(id: impl Into<String>, genre: Genre, tokens: Vec<AnnotatedToken>) -> Self {
        Self {
            id: id.into(),
            genre,
            source: Vec::new(),
            tokens,
            align_err: false,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// An ordered collection of sentences.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Self { sentences }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &AnnotatedToken> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    /// Annotation levels carrying at least one non-empty cell.
    pub fn schema(&self) -> BTreeSet<Level> {
        let mut levels = BTreeSet::new();
        for token in self.tokens() {
            for (level, cell) in token.cells() {
                if cell.status() != CellStatus::Empty {
                    levels.insert(level);
                }
            }
        }
        levels
    }

    pub fn max_sentence_len(&self) -> usize {
        self.sentences.iter().map(Sentence::len).max().unwrap_or(0)
    }
}

/// Per-level cell counts by status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LevelStatus {
    pub gold: usize,
    pub predicted: usize,
    pub empty: usize,
}

/// A contiguous slice of the corpus annotated in one round.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusBlock {
    pub index: usize,
    pub sentences: Vec<Sentence>,
}

impl CorpusBlock {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn status_summary(&self) -> Vec<(Level, LevelStatus)> {
        Level::ALL
            .into_iter()
            .map(|level| {
                let mut s = LevelStatus::default();
                for token in self.sentences.iter().flat_map(|s| &s.tokens) {
                    match token.cell(level).status() {
                        CellStatus::Gold => s.gold += 1,
                        CellStatus::Predicted => s.predicted += 1,
                        CellStatus::Empty => s.empty += 1,
                    }
                }
                (level, s)
            })
            .collect()
    }

    pub fn to_corpus(&self) -> Corpus {
        Corpus::new(self.sentences.clone())
    }
}
