//! Descriptive corpus statistics.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{Corpus, Genre};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsRow {
    pub sentences: usize,
    pub words: usize,
}

impl StatsRow {
    /// Average sentence length in tenths of a word, rounded half-up.
    pub fn avg_tenths(&self) -> u64 {
        if self.sentences == 0 {
            return 0;
        }
        let (w, s) = (self.words as u64, self.sentences as u64);
        (20 * w + s) / (2 * s)
    }

    pub fn avg(&self) -> f64 {
        self.avg_tenths() as f64 / 10.0
    }

    pub fn avg_display(&self) -> String {
        let t = self.avg_tenths();
        format!("{}.{}", t / 10, t % 10)
    }
}

/// Per-genre and total sentence/word counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: StatsRow,
    /// One row per genre, in [`Genre::ALL`] order.
    pub genres: Vec<(Genre, StatsRow)>,
}

impl CorpusStats {
    pub fn genre(&self, genre: Genre) -> StatsRow {
        self.genres
            .iter()
            .find(|(g, _)| *g == genre)
            .map(|(_, r)| *r)
            .unwrap_or_default()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("row\tsentences\twords\tavg_len\n");
        let _ = writeln!(
            out,
            "total\t{}\t{}\t{}",
            self.total.sentences,
            self.total.words,
            self.total.avg_display()
        );
        for (g, r) in &self.genres {
            let _ = writeln!(
                out,
                "{g}\t{}\t{}\t{}",
                r.sentences,
                r.words,
                r.avg_display()
            );
        }
        out
    }
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>10} {:>10} {:>18}",
            "", "Sentences", "Words", "Avg sentence len."
        )?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, r: &StatsRow| {
            writeln!(
                f,
                "{:<8} {:>10} {:>10} {:>18}",
                name,
                thousands(r.sentences),
                thousands(r.words),
                r.avg_display()
            )
        };
        row(f, "Total", &self.total)?;
        for (g, r) in &self.genres {
            row(f, g.as_str(), r)?;
        }
        Ok(())
    }
}

/// Counts sentences and words (token entries) per genre and in total.
pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    let mut genres: Vec<(Genre, StatsRow)> = Genre::ALL
        .iter()
        .map(|g| (*g, StatsRow::default()))
        .collect();
    for s in &corpus.sentences {
        let row = &mut genres
            .iter_mut()
            .find(|(g, _)| *g == s.genre)
            .expect("all genres listed")
            .1;
        row.sentences += 1;
        row.words += s.tokens.len();
    }
    let total = genres
        .iter()
        .fold(StatsRow::default(), |acc, (_, r)| StatsRow {
            sentences: acc.sentences + r.sentences,
            words: acc.words + r.words,
        });
    CorpusStats { total, genres }
}
