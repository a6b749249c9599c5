use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Corpus, Genre, Sentence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Shuffle and split the whole corpus at once.
    Global,
    /// Shuffle and split each genre separately, then concatenate.
    Genre,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// (train, dev, test)
    pub ratios: [f64; 3],
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.7, 0.15, 0.15],
            mode: SplitMode::Genre,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        let sum: f64 = self.ratios.iter().sum();
        if self.ratios.iter().any(|r| r.is_nan() || *r <= 0.0) || (sum - 1.0).abs() >= 1e-9 {
            return Err(SplitError::BadRatios(self.ratios));
        }
        Ok(())
    }

    /// (train, dev, test) sizes for `n` sentences: dev and test get
    /// floor(ratio * n), train gets the rest.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs representation error such as 0.15 * 20 = 2.9999...
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let dev = floor(self.ratios[1]);
        let test = floor(self.ratios[2]).min(n - dev);
        (n - dev - test, dev, test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl Splits {
    pub fn parts(&self) -> [(&'static str, &Corpus); 3] {
        [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
        ]
    }
}

fn split_group(
    group: &mut Vec<&Sentence>,
    spec: &SplitSpec,
    rng: &mut ChaCha8Rng,
    out: &mut Splits,
) {
    group.shuffle(rng);
    let (train, dev, _) = spec.sizes(group.len());
    for (i, s) in group.iter().enumerate() {
        let target = if i < train {
            &mut out.train
        } else if i < train + dev {
            &mut out.dev
        } else {
            &mut out.test
        };
        target.sentences.push((*s).clone());
    }
}

/// Sentence-level train/dev/test split, deterministic in `spec.seed`.
pub fn make_splits(corpus: &Corpus, spec: &SplitSpec) -> Result<Splits, SplitError> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Splits::default();
    match spec.mode {
        SplitMode::Global => {
            let mut all: Vec<&Sentence> = corpus.sentences.iter().collect();
            split_group(&mut all, spec, &mut rng, &mut out);
        }
        SplitMode::Genre => {
            for genre in Genre::ALL {
                let mut group: Vec<&Sentence> = corpus
                    .sentences
                    .iter()
                    .filter(|s| s.genre == genre)
                    .collect();
                if !group.is_empty() {
                    split_group(&mut group, spec, &mut rng, &mut out);
                }
            }
        }
    }
    Ok(out)
}

/// One sentence id per line.
pub fn write_manifest(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        let _ = writeln!(out, "{}", s.id);
    }
    out
}

pub fn read_manifest(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::corpus_with_lengths;

    fn genre_corpus(counts: &[(Genre, usize)]) -> Corpus {
        let mut sentences = Vec::new();
        for &(g, n) in counts {
            let c = corpus_with_lengths(&vec![3; n], sentences.len() as u64);
            for (i, mut s) in c.sentences.into_iter().enumerate() {
                s.genre = g;
                s.id = format!("{g}-{i}");
                sentences.push(s);
            }
        }
        Corpus::new(sentences)
    }

    #[test]
    fn genre_mode_sizes() {
        let c = genre_corpus(&[(Genre::Forum, 400), (Genre::Social, 600)]);
        let s = make_splits(
            &c,
            &SplitSpec {
                mode: SplitMode::Genre,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            (
                s.train.sentences.len(),
                s.dev.sentences.len(),
                s.test.sentences.len()
            ),
            (700, 150, 150)
        );
        let forum_dev = s
            .dev
            .sentences
            .iter()
            .filter(|x| x.genre == Genre::Forum)
            .count();
        assert_eq!(forum_dev, 60);
    }

    #[test]
    fn global_mode_twenty() {
        let c = corpus_with_lengths(&[3; 20], 0);
        let s = make_splits(
            &c,
            &SplitSpec {
                mode: SplitMode::Global,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            (
                s.train.sentences.len(),
                s.dev.sentences.len(),
                s.test.sentences.len()
            ),
            (14, 3, 3)
        );
    }

    #[test]
    fn deterministic_in_seed() {
        let c = corpus_with_lengths(&[4; 57], 3);
        let spec = SplitSpec {
            seed: 11,
            ..Default::default()
        };
        let a = make_splits(&c, &spec).unwrap();
        let b = make_splits(&c, &spec).unwrap();
        assert_eq!(write_manifest(&a.train), write_manifest(&b.train));
        assert_eq!(a, b);
        let other = make_splits(&c, &SplitSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(write_manifest(&a.train), write_manifest(&other.train));
    }

    #[test]
    fn bad_ratios_rejected() {
        let c = corpus_with_lengths(&[3; 5], 0);
        for ratios in [[0.7, 0.2, 0.2], [1.0, 0.0, 0.0], [0.8, -0.1, 0.3]] {
            assert!(make_splits(
                &c,
                &SplitSpec {
                    ratios,
                    ..Default::default()
                }
            )
            .is_err());
        }
    }

    #[test]
    fn manifest_round_trip() {
        let c = corpus_with_lengths(&[3; 4], 0);
        let ids = read_manifest(&write_manifest(&c));
        assert_eq!(
            ids,
            c.sentences.iter().map(|s| s.id.clone()).collect::<Vec<_>>()
        );
    }
}
