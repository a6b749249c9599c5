use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encode::{units_of, InputMode};
use super::Task;
use crate::{Corpus, Level};

/// Reserved symbols present at fixed indices in every vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Special {
    Pad = 0,
    Bos = 1,
    Eos = 2,
    Unk = 3,
    /// Token boundary.
    TokSep = 4,
}

impl Special {
    pub const ALL: [Special; 5] = [
        Special::Pad,
        Special::Bos,
        Special::Eos,
        Special::Unk,
        Special::TokSep,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Special::Pad => "<pad>",
            Special::Bos => "<bos>",
            Special::Eos => "<eos>",
            Special::Unk => "<unk>",
            Special::TokSep => "<sep>",
        }
    }
}

pub const PAD: usize = Special::Pad as usize;
pub const BOS: usize = Special::Bos as usize;
pub const EOS: usize = Special::Eos as usize;
pub const UNK: usize = Special::Unk as usize;
pub const TOKSEP: usize = Special::TokSep as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    InputChars,
    CodaChars,
    LemmaChars,
    TokenizationChars,
    ClassLabels,
    PosTags,
}

impl Stream {
    pub const ALL: [Stream; 6] = [
        Stream::InputChars,
        Stream::CodaChars,
        Stream::LemmaChars,
        Stream::TokenizationChars,
        Stream::ClassLabels,
        Stream::PosTags,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::InputChars => "input-chars",
            Stream::CodaChars => "coda-chars",
            Stream::LemmaChars => "lemma-chars",
            Stream::TokenizationChars => "tokenization-chars",
            Stream::ClassLabels => "class-labels",
            Stream::PosTags => "pos-tags",
        }
    }

    /// Annotation level the stream reads from; `None` for surface forms.
    pub fn level(self) -> Option<Level> {
        match self {
            Stream::InputChars => None,
            Stream::CodaChars => Some(Level::Coda),
            Stream::LemmaChars => Some(Level::Lemma),
            Stream::TokenizationChars => Some(Level::Tokenization),
            Stream::ClassLabels => Some(Level::Class),
            Stream::PosTags => Some(Level::Pos),
        }
    }

    /// Whole values are single symbols rather than character sequences.
    pub fn is_tag_stream(self) -> bool {
        matches!(self, Stream::ClassLabels | Stream::PosTags)
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stream::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown stream {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("vocabulary line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Symbol <-> index map for one stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    stream: Stream,
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    stream: Stream,
    symbols: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let mut v = Vocabulary::empty(r.stream);
        for s in r.symbols.into_iter().skip(Special::COUNT) {
            v.insert(&s);
        }
        v
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            stream: v.stream,
            symbols: v.symbols,
        }
    }
}

impl Vocabulary {
    /// Vocabulary holding only the special symbols.
    pub fn empty(stream: Stream) -> Self {
        let symbols: Vec<String> = Special::ALL
            .iter()
            .map(|s| s.symbol().to_string())
            .collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self {
            stream,
            symbols,
            index,
        }
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    pub fn insert(&mut self, symbol: &str) -> usize {
        if let Some(&i) = self.index.get(symbol) {
            return i;
        }
        let i = self.symbols.len();
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Index of `symbol`, or UNK.
    pub fn encode(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK)
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.symbols.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{s}");
        }
        out
    }

    pub fn from_tsv(stream: Stream, text: &str) -> Result<Self, VocabError> {
        let mut v = Vocabulary::empty(stream);
        for (n, line) in text.lines().enumerate() {
            let bad = |reason: &str| VocabError::Malformed {
                line: n + 1,
                reason: reason.to_string(),
            };
            let (idx, sym) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected index<TAB>symbol"))?;
            let idx: usize = idx.parse().map_err(|_| bad("index is not a number"))?;
            if idx != n {
                return Err(bad("indices must be dense and ordered"));
            }
            if idx < Special::COUNT {
                if sym != Special::ALL[idx].symbol() {
                    return Err(bad("special symbols must come first"));
                }
            } else if v.insert(sym) != idx {
                return Err(bad("duplicate symbol"));
            }
        }
        Ok(v)
    }
}

/// Vocabulary of `stream` over the gold cells of `corpus`, specials first
/// and then symbols in first-occurrence order.
pub fn build_vocabulary(corpus: &Corpus, stream: Stream) -> Vocabulary {
    let mut v = Vocabulary::empty(stream);
    for token in corpus.tokens() {
        let value = match stream.level() {
            None => Some(token.surface()),
            Some(level) => token.cell(level).gold_value(),
        };
        if let Some(value) = value {
            for unit in units_of(stream, value) {
                v.insert(unit.as_ref());
            }
        }
    }
    v
}

/// Input vocabulary plus one target vocabulary per task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSet {
    pub input_mode: InputMode,
    pub input: Vocabulary,
    pub targets: BTreeMap<Task, Vocabulary>,
}

impl VocabSet {
    pub fn build(corpus: &Corpus, input_mode: InputMode, tasks: &[Task]) -> Self {
        let input = match input_mode {
            InputMode::Arabizi => build_vocabulary(corpus, Stream::InputChars),
            InputMode::Ar => build_vocabulary(corpus, Stream::CodaChars),
        };
        let targets = tasks
            .iter()
            .map(|&t| (t, build_vocabulary(corpus, t.stream())))
            .collect();
        Self {
            input_mode,
            input,
            targets,
        }
    }

    pub fn target(&self, task: Task) -> &Vocabulary {
        &self.targets[&task]
    }

    pub fn tasks(&self) -> impl Iterator<Item = Task> + '_ {
        self.targets.keys().copied()
    }
}
