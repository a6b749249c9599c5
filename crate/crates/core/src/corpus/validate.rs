//! Corpus invariant checks.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{is_sentinel, AnnotatedToken, Corpus, Level, TokenClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    /// A foreign/emotag token carries a non-sentinel downstream value.
    SentinelViolation,
    /// An arabizi token's CODA contains non Arabic-script characters.
    CodaScript,
    /// Composite POS subtag count differs from the tokenization segment count.
    SubtagMismatch,
    EmptySentence,
    DuplicateSentenceId,
    /// Sentence id or source metadata not representable in the file format.
    MalformedMetadata,
    /// Warning: tokenization with '+' removed differs from the CODA form.
    TokenizationMismatch,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::SentinelViolation => "SENTINEL_VIOLATION",
            Rule::CodaScript => "CODA_SCRIPT",
            Rule::SubtagMismatch => "SUBTAG_MISMATCH",
            Rule::EmptySentence => "EMPTY_SENTENCE",
            Rule::DuplicateSentenceId => "DUPLICATE_SENTENCE_ID",
            Rule::MalformedMetadata => "MALFORMED_METADATA",
            Rule::TokenizationMismatch => "TOKENIZATION_MISMATCH",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            Rule::TokenizationMismatch => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub sentence: String,
    pub token: Option<usize>,
    pub level: Option<Level>,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    /// Invariant violations; empty iff the corpus is valid.
    pub violations: Vec<Violation>,
    /// Non-fatal findings.
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Arabic-script code point, including presentation forms and diacritics.
pub fn is_arabic_script(c: char) -> bool {
    matches!(c as u32,
        0x0600..=0x06FF | 0x0750..=0x077F | 0x08A0..=0x08FF | 0xFB50..=0xFDFF | 0xFE70..=0xFEFF)
}

fn meta_ok(s: &str, allow_empty: bool) -> bool {
    (allow_empty || !s.is_empty()) && !s.chars().any(|c| matches!(c, '\t' | '\n' | '\r'))
}

/// Checks the invariants of a single token; `push` receives (level, rule, detail).
pub(crate) fn check_token(
    token: &AnnotatedToken,
    mut push: impl FnMut(Option<Level>, Rule, String),
) {
    match token.class() {
        Some(class) if class != TokenClass::Arabizi => {
            let sentinel = class.as_str();
            for level in Level::DOWNSTREAM {
                if let Some(v) = token.value(level) {
                    if v != sentinel {
                        push(
                            Some(level),
                            Rule::SentinelViolation,
                            format!(
                                "{class} token {:?} has {level} {v:?}, expected {sentinel:?}",
                                token.surface()
                            ),
                        );
                    }
                }
            }
            return;
        }
        _ => {}
    }
    // Arabizi or unclassified token.
    let coda = token.value(Level::Coda);
    if token.class() == Some(TokenClass::Arabizi) {
        if let Some(c) = coda {
            if !c.chars().all(is_arabic_script) {
                push(
                    Some(Level::Coda),
                    Rule::CodaScript,
                    format!("coda {c:?} of {:?} is not Arabic script", token.surface()),
                );
            }
        }
    }
    let tok = token.value(Level::Tokenization);
    if let (Some(pos), Some(tok)) = (token.value(Level::Pos), tok) {
        if pos.contains('+') && !is_sentinel(pos) && !is_sentinel(tok) {
            let subtags = pos.split('+').count();
            let segments = tok.split('+').count();
            if subtags != segments {
                push(
                    Some(Level::Pos),
                    Rule::SubtagMismatch,
                    format!("pos {pos:?} has {subtags} subtags but tokenization {tok:?} has {segments} segments"),
                );
            }
        }
    }
    if let (Some(c), Some(t)) = (coda, tok) {
        if !is_sentinel(t) && t.replace('+', "") != c {
            push(
                Some(Level::Tokenization),
                Rule::TokenizationMismatch,
                format!("tokenization {t:?} without '+' differs from coda {c:?}"),
            );
        }
    }
}

/// Lists every invariant violation (and strip-'+' warning) in `corpus`.
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for sentence in &corpus.sentences {
        let mut push = |token: Option<usize>, level: Option<Level>, rule: Rule, detail: String| {
            let v = Violation {
                sentence: sentence.id.clone(),
                token,
                level,
                rule,
                detail,
            };
            match rule.severity() {
                Severity::Error => report.violations.push(v),
                Severity::Warning => report.warnings.push(v),
            }
        };
        if !meta_ok(&sentence.id, false) || sentence.id.chars().any(char::is_whitespace) {
            push(
                None,
                None,
                Rule::MalformedMetadata,
                format!("bad sentence id {:?}", sentence.id),
            );
        }
        for (k, v) in &sentence.source {
            let key_ok = meta_ok(k, false) && !k.contains(' ');
            if !key_ok || !meta_ok(v, true) {
                push(
                    None,
                    None,
                    Rule::MalformedMetadata,
                    format!("bad source entry {k:?} = {v:?}"),
                );
            }
        }
        if !seen.insert(sentence.id.as_str()) {
            push(
                None,
                None,
                Rule::DuplicateSentenceId,
                format!("sentence id {:?} repeated", sentence.id),
            );
        }
        if sentence.tokens.is_empty() {
            push(
                None,
                None,
                Rule::EmptySentence,
                "sentence has no tokens".to_string(),
            );
        }
        for (i, token) in sentence.tokens.iter().enumerate() {
            check_token(token, |level, rule, detail| {
                push(Some(i), level, rule, detail)
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Cell, Genre, Sentence};

    fn corpus_of(tokens: Vec<AnnotatedToken>) -> Corpus {
        Corpus::new(vec![Sentence::new("s1", Genre::Social, tokens)])
    }

    #[test]
    fn foreign_with_pos_noun_is_one_violation() {
        let t = AnnotatedToken::sentinel("ma", TokenClass::Foreign)
            .unwrap()
            .with(Level::Pos, Cell::gold("NOUN"))
            .unwrap();
        let r = validate_corpus(&corpus_of(vec![t]));
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::SentinelViolation);
        assert_eq!(r.violations[0].token, Some(0));
    }

    #[test]
    fn clitic_split_matches_coda() {
        let t = AnnotatedToken::gold(
            "kollehom",
            TokenClass::Arabizi,
            "كلّهم",
            "كلّ+هم",
            "NOUN_QUANT+PRON_3P",
            "كلّ",
        )
        .unwrap();
        let r = validate_corpus(&corpus_of(vec![t]));
        assert!(r.violations.is_empty());
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn subtag_count_mismatch() {
        let t = AnnotatedToken::gold(
            "x",
            TokenClass::Arabizi,
            "ابت",
            "ا+ب+ت",
            "NOUN+PRON_3P",
            "ا",
        )
        .unwrap();
        let r = validate_corpus(&corpus_of(vec![t]));
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::SubtagMismatch);
    }

    /// Independent count of subtags vs segments, by brute force over characters.
    fn brute_mismatch(pos: &str, tok: &str) -> bool {
        let plus = |s: &str| s.chars().filter(|&c| c == '+').count();
        pos.contains('+') && plus(pos) != plus(tok)
    }

    #[test]
    fn subtag_rule_agrees_with_brute_force() {
        let tags = [
            "NOUN",
            "NOUN+PRON_3P",
            "DET+NOUN+POSS_PRON_1S",
            "PV-PVSUFF_SUBJ:3P",
        ];
        let toks = ["كلّ", "كلّ+هم", "ال+حوايج+ي", "و+ال+ك+هم"];
        for pos in tags {
            for tok in toks {
                let t = AnnotatedToken::gold(
                    "w",
                    TokenClass::Arabizi,
                    &tok.replace('+', ""),
                    tok,
                    pos,
                    "ا",
                )
                .unwrap();
                let r = validate_corpus(&corpus_of(vec![t]));
                let got = r.violations.iter().any(|v| v.rule == Rule::SubtagMismatch);
                assert_eq!(got, brute_mismatch(pos, tok), "{pos} vs {tok}");
            }
        }
    }

    #[test]
    fn latin_coda_on_arabizi_token() {
        let t = AnnotatedToken::gold("ena", TokenClass::Arabizi, "ena", "انا", "PRON_1S", "هو")
            .unwrap();
        let r = validate_corpus(&corpus_of(vec![t]));
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::CodaScript);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn empty_and_duplicate_sentences() {
        let t = AnnotatedToken::new("ena").unwrap();
        let c = Corpus::new(vec![
            Sentence::new("a", Genre::Rap, vec![t.clone()]),
            Sentence::new("a", Genre::Rap, vec![]),
        ]);
        let rules: Vec<Rule> = validate_corpus(&c)
            .violations
            .iter()
            .map(|v| v.rule)
            .collect();
        assert_eq!(rules, vec![Rule::DuplicateSentenceId, Rule::EmptySentence]);
    }

    #[test]
    fn empty_downstream_cells_allowed_for_foreign() {
        let t = AnnotatedToken::new("merci")
            .unwrap()
            .with(Level::Class, Cell::gold("foreign"))
            .unwrap();
        assert!(validate_corpus(&corpus_of(vec![t])).is_valid());
    }
}
