//! TSV corpus format.
//!
//! ```text
//! # id = s0001
//! # genre = social
//! # source.url_hash = 9f2c
//! ena	arabizi	انا	انا	PRON_1S	هو	GGGGG
//! ma	foreign	foreign	foreign	foreign	foreign	GGGGG
//!
//! ```
//!
//! Each token line has seven tab-separated columns: surface, class, coda,
//! tokenization, pos, lemma and a five-letter status string (`G`old,
//! `P`redicted, `E`mpty) for the five annotation columns. Empty cells hold
//! the `_` placeholder. Every sentence is terminated by a blank line.
#![allow(clippy::tabs_in_doc_comments)]

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{
    validate_corpus, AnnotatedToken, Cell, CellStatus, Corpus, Genre, Level, Rule, Sentence,
    TokenError, Violation,
};

/// Placeholder written in place of an empty cell.
pub const EMPTY_PLACEHOLDER: &str = "_";

const FIELDS: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: invalid class {value:?}")]
    InvalidClass { line: usize, value: String },
    #[error("line {line}: sentinel violation in sentence {sentence} token {token}: {detail}")]
    SentinelViolation {
        line: usize,
        sentence: String,
        token: usize,
        detail: String,
    },
    #[error("line {line}: {}: {}", violation.rule.name(), violation.detail)]
    Invariant { line: usize, violation: Violation },
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::MalformedLine { .. } => "MALFORMED_LINE",
            CorpusError::InvalidClass { .. } => "INVALID_CLASS",
            CorpusError::SentinelViolation { .. } => "SENTINEL_VIOLATION",
            CorpusError::Invariant { violation, .. } => violation.rule.name(),
        }
    }

    pub fn line(&self) -> usize {
        match self {
            CorpusError::MalformedLine { line, .. }
            | CorpusError::InvalidClass { line, .. }
            | CorpusError::SentinelViolation { line, .. }
            | CorpusError::Invariant { line, .. } => *line,
        }
    }
}

#[derive(Default)]
struct Pending {
    id: Option<String>,
    genre: Option<Genre>,
    source: Vec<(String, String)>,
    align_err: bool,
    tokens: Vec<AnnotatedToken>,
    first_line: usize,
    token_lines: Vec<usize>,
}

fn malformed(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

fn token_error(line: usize, err: TokenError) -> CorpusError {
    match err {
        TokenError::InvalidClass(c) => CorpusError::InvalidClass { line, value: c.0 },
        other => malformed(line, other.to_string()),
    }
}

/// Parses the TSV corpus format and validates every corpus invariant.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    if text.starts_with('\u{feff}') {
        return Err(malformed(1, "byte order mark not allowed"));
    }
    let mut sentences = Vec::new();
    // (sentence, token) -> line number, for error reporting after validation.
    let mut lines_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut sentence_lines: Vec<usize> = Vec::new();
    let mut pending = Pending::default();

    let mut finish = |pending: &mut Pending, line: usize| -> Result<(), CorpusError> {
        let p = std::mem::take(pending);
        if p.id.is_none()
            && p.genre.is_none()
            && p.source.is_empty()
            && p.tokens.is_empty()
            && !p.align_err
        {
            return Ok(());
        }
        if p.tokens.is_empty() {
            return Err(malformed(line, "sentence has no token lines"));
        }
        let id =
            p.id.ok_or_else(|| malformed(p.first_line, "sentence is missing '# id = ...'"))?;
        let genre = p
            .genre
            .ok_or_else(|| malformed(p.first_line, "sentence is missing '# genre = ...'"))?;
        let index = sentences.len();
        for (t, l) in p.token_lines.iter().enumerate() {
            lines_of.insert((index, t), *l);
        }
        sentence_lines.push(p.first_line);
        sentences.push(Sentence {
            id,
            genre,
            source: p.source,
            tokens: p.tokens,
            align_err: p.align_err,
        });
        Ok(())
    };

    let mut last_line = 0;
    for (i, raw) in text.split('\n').enumerate() {
        let line = i + 1;
        last_line = line;
        if raw.is_empty() {
            finish(&mut pending, line)?;
            continue;
        }
        if pending.first_line == 0 {
            pending.first_line = line;
        }
        if let Some(meta) = raw.strip_prefix('#') {
            if !pending.tokens.is_empty() {
                return Err(malformed(line, "metadata line inside a sentence"));
            }
            let (key, value) = meta
                .strip_prefix(' ')
                .and_then(|m| m.split_once(" = "))
                .ok_or_else(|| malformed(line, "metadata must look like '# key = value'"))?;
            match key {
                "id" => {
                    if value.is_empty() || value.chars().any(char::is_whitespace) {
                        return Err(malformed(
                            line,
                            "sentence id must be non-empty without whitespace",
                        ));
                    }
                    pending.id = Some(value.to_string());
                }
                "genre" => {
                    pending.genre = Some(value.parse().map_err(|e: String| malformed(line, e))?);
                }
                "flags" => match value {
                    "align_err" => pending.align_err = true,
                    other => return Err(malformed(line, format!("unknown flag {other:?}"))),
                },
                k => match k.strip_prefix("source.") {
                    Some(name) if !name.is_empty() => {
                        pending.source.push((name.to_string(), value.to_string()))
                    }
                    _ => return Err(malformed(line, format!("unknown metadata key {k:?}"))),
                },
            }
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != FIELDS {
            return Err(malformed(
                line,
                format!(
                    "expected {FIELDS} tab-separated fields, found {}",
                    fields.len()
                ),
            ));
        }
        let flags: Vec<CellStatus> = fields[6]
            .chars()
            .map(CellStatus::from_flag)
            .collect::<Option<_>>()
            .filter(|f: &Vec<CellStatus>| f.len() == Level::ALL.len())
            .ok_or_else(|| malformed(line, format!("bad status flags {:?}", fields[6])))?;
        let mut token = AnnotatedToken::new(fields[0]).map_err(|e| token_error(line, e))?;
        for ((level, value), status) in Level::ALL.into_iter().zip(&fields[1..6]).zip(flags) {
            let cell = match (*value == EMPTY_PLACEHOLDER, status) {
                (true, CellStatus::Empty) => Cell::Empty,
                (false, CellStatus::Empty) | (true, _) => {
                    return Err(malformed(
                        line,
                        format!(
                            "{level} value {value:?} disagrees with status {}",
                            status.flag()
                        ),
                    ))
                }
                (false, s) => Cell::with_status(*value, s),
            };
            token.set(level, cell).map_err(|e| token_error(line, e))?;
        }
        pending.tokens.push(token);
        pending.token_lines.push(line);
    }
    finish(&mut pending, last_line)?;

    let corpus = Corpus::new(sentences);
    let report = validate_corpus(&corpus);
    if let Some(v) = report.violations.into_iter().next() {
        let sentence_index = corpus
            .sentences
            .iter()
            .position(|s| s.id == v.sentence)
            .unwrap_or(0);
        let line = v
            .token
            .and_then(|t| lines_of.get(&(sentence_index, t)).copied())
            .or_else(|| sentence_lines.get(sentence_index).copied())
            .unwrap_or(0);
        return Err(match v.rule {
            Rule::SentinelViolation => CorpusError::SentinelViolation {
                line,
                sentence: v.sentence.clone(),
                token: v.token.unwrap_or(0),
                detail: v.detail,
            },
            _ => CorpusError::Invariant { line, violation: v },
        });
    }
    Ok(corpus)
}

/// Writes the canonical TSV form of `corpus`.
pub fn serialize_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for sentence in &corpus.sentences {
        let _ = writeln!(out, "# id = {}", sentence.id);
        let _ = writeln!(out, "# genre = {}", sentence.genre);
        for (k, v) in &sentence.source {
            let _ = writeln!(out, "# source.{k} = {v}");
        }
        if sentence.align_err {
            out.push_str("# flags = align_err\n");
        }
        for token in &sentence.tokens {
            out.push_str(token.surface());
            let mut flags = String::with_capacity(5);
            for (_, cell) in token.cells() {
                out.push('\t');
                out.push_str(cell.value().unwrap_or(EMPTY_PLACEHOLDER));
                flags.push(cell.status().flag());
            }
            out.push('\t');
            out.push_str(&flags);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
