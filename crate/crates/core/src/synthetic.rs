//! Seeded synthetic Arabizi corpora for tests, demos and fixtures.
//!
//! Sentences are drawn from a small hand-written lexicon of Tunisian words
//! (with CODA, tokenization, POS and lemma), French insertions and
//! emoticons, so every level is filled with plausible gold data.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{AnnotatedToken, Cell, Corpus, Genre, Level, Sentence, TokenClass};

/// (surface, coda, tokenization, pos, lemma)
const ARABIZI: &[(&str, &str, &str, &str, &str)] = &[
    ("ena", "انا", "انا", "PRON_1S", "هو"),
    ("ba3d", "بعد", "بعد", "ADV", "بعد"),
    ("houayji", "حوايجي", "حوايج+ي", "NOUN+POSS_PRON_1S", "حوايج"),
    ("el", "ال", "ال", "DET", "ال"),
    ("kdom", "قدم", "قدم", "ADJ", "قديم"),
    ("kollehom", "كلّهم", "كلّ+هم", "NOUN_QUANT+PRON_3P", "كلّ"),
    ("waleou", "ولّاوا", "ولّاوا", "PV-PVSUFF_SUBJ:3P", "ولّى"),
    ("3andi", "عندي", "عند+ي", "PREP+PRON_1S", "عند"),
    ("3andek", "عندك", "عند+ك", "PREP+PRON_2S", "عند"),
    ("barcha", "برشا", "برشا", "ADV", "برشا"),
    ("barsha", "برشا", "برشا", "ADV", "برشا"),
    ("mouch", "موش", "موش", "NEG_PART", "موش"),
    ("behi", "باهي", "باهي", "ADJ", "باهي"),
    ("lyoum", "اليوم", "ال+يوم", "DET+NOUN", "يوم"),
    ("khouya", "خويا", "خو+يا", "NOUN+POSS_PRON_1S", "خو"),
    ("ommi", "امي", "ام+ي", "NOUN+POSS_PRON_1S", "ام"),
    ("fi", "في", "في", "PREP", "في"),
    ("dar", "دار", "دار", "NOUN", "دار"),
    ("mchit", "مشيت", "مشيت", "PV-PVSUFF_SUBJ:1S", "مشى"),
    ("klit", "كليت", "كليت", "PV-PVSUFF_SUBJ:1S", "كلا"),
    ("chnowa", "شنوّة", "شنوّة", "INTERROG_PRON", "شنوّة"),
    ("kifech", "كيفاش", "كيفاش", "INTERROG_ADV", "كيفاش"),
    ("wa9t", "وقت", "وقت", "NOUN", "وقت"),
    ("yesser", "ياسر", "ياسر", "ADV", "ياسر"),
    ("sahbi", "صاحبي", "صاحب+ي", "NOUN+POSS_PRON_1S", "صاحب"),
    ("n7eb", "نحب", "نحب", "IV1S-IV", "حب"),
    ("nheb", "نحب", "نحب", "IV1S-IV", "حب"),
    ("nemchi", "نمشي", "نمشي", "IV1S-IV", "مشى"),
    ("mte3i", "متاعي", "متاع+ي", "NOUN+POSS_PRON_1S", "متاع"),
    ("lebled", "البلاد", "ال+بلاد", "DET+NOUN", "بلاد"),
    ("zeda", "زادة", "زادة", "ADV", "زادة"),
    ("w", "و", "و", "CONJ", "و"),
    ("ama", "اما", "اما", "CONJ", "اما"),
    ("9albi", "قلبي", "قلب+ي", "NOUN+POSS_PRON_1S", "قلب"),
    ("rabbi", "ربي", "ربي", "NOUN_PROP", "ربي"),
    ("mela", "مالا", "مالا", "ADV", "مالا"),
    ("tawa", "توا", "توا", "ADV", "توا"),
    ("jit", "جيت", "جيت", "PV-PVSUFF_SUBJ:1S", "جا"),
];

const FOREIGN: &[&str] = &[
    "ma",
    "grossesse",
    "motivation",
    "merci",
    "bonjour",
    "vraiment",
    "travail",
    "la",
    "vie",
    "super",
    "bien",
    "probleme",
    "weekend",
    "facebook",
    "normal",
];

const EMOTAG: &[&str] = &[":)", ":D", "<3", ":(", ";)", "xD", "!!!"];

/// The 11-token sentence "ena ba3d ma grossesse houayji el kdom el kollehom
/// waleou motivation" with all levels gold.
pub fn excerpt_sentence(id: &str) -> Sentence {
    let words = [
        "ena",
        "ba3d",
        "ma",
        "grossesse",
        "houayji",
        "el",
        "kdom",
        "el",
        "kollehom",
        "waleou",
        "motivation",
    ];
    let tokens = words
        .iter()
        .map(|w| lexicon_token(w).expect("excerpt words are in the lexicon"))
        .collect();
    Sentence::new(id, Genre::Social, tokens)
}

/// Gold token for a lexicon word, if it is known.
pub fn lexicon_token(surface: &str) -> Option<AnnotatedToken> {
    if let Some((s, coda, tok, pos, lemma)) = ARABIZI.iter().find(|e| e.0 == surface) {
        return AnnotatedToken::gold(s, TokenClass::Arabizi, coda, tok, pos, lemma).ok();
    }
    if FOREIGN.contains(&surface) {
        return AnnotatedToken::sentinel(surface, TokenClass::Foreign).ok();
    }
    if EMOTAG.contains(&surface) {
        return AnnotatedToken::sentinel(surface, TokenClass::Emotag).ok();
    }
    None
}

fn random_token(rng: &mut impl Rng) -> AnnotatedToken {
    let roll: f64 = rng.random();
    let surface = if roll < 0.75 {
        ARABIZI.choose(rng).unwrap().0
    } else if roll < 0.93 {
        FOREIGN.choose(rng).unwrap()
    } else {
        EMOTAG.choose(rng).unwrap()
    };
    lexicon_token(surface).unwrap()
}

/// Random gold sentence of `len` tokens.
pub fn random_sentence(id: String, genre: Genre, len: usize, rng: &mut impl Rng) -> Sentence {
    let tokens = (0..len).map(|_| random_token(rng)).collect();
    Sentence::new(id, genre, tokens)
}

/// One sentence per entry of `lengths`, genres cycling through all four.
pub fn corpus_with_lengths(lengths: &[usize], seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            random_sentence(format!("syn{seed}-{i}"), Genre::ALL[i % 4], len, &mut rng)
        })
        .collect();
    Corpus::new(sentences)
}

/// Corpus of exactly `tokens` tokens in sentences of 3 to 14 tokens.
pub fn corpus_with_token_count(tokens: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut lengths = Vec::new();
    let mut remaining = tokens;
    while remaining > 0 {
        let len = if remaining <= 14 {
            remaining
        } else {
            rng.random_range(3..=12)
        };
        lengths.push(len);
        remaining -= len;
    }
    corpus_with_lengths(&lengths, seed)
}

/// Genre-contiguous corpus with exact (genre, sentences, words) counts.
/// Sentence lengths within a genre differ by at most one.
pub fn genre_corpus(rows: &[(Genre, usize, usize)], seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::new();
    for &(genre, n, words) in rows {
        let (base, extra) = (words / n, words % n);
        let mut lengths: Vec<usize> = (0..n).map(|i| base + usize::from(i < extra)).collect();
        rand::seq::SliceRandom::shuffle(lengths.as_mut_slice(), &mut rng);
        for (i, len) in lengths.into_iter().enumerate() {
            sentences.push(random_sentence(
                format!("{genre}-{i:05}"),
                genre,
                len,
                &mut rng,
            ));
        }
    }
    Corpus::new(sentences)
}

/// Per-genre sentence and word counts of the released corpus.
pub const TABLE1_COUNTS: [(Genre, usize, usize); 4] = [
    (Genre::Forum, 755, 11_909),
    (Genre::Social, 3_162, 16_056),
    (Genre::Blog, 366, 6_671),
    (Genre::Rap, 514, 8_691),
];

/// Fixture mirroring the released corpus's sentence and word counts.
pub fn table1_fixture() -> Corpus {
    genre_corpus(&TABLE1_COUNTS, 2022)
}

/// Small corpus of short sentences for memorisation checks.
pub fn overfit_corpus(sentences: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths: Vec<usize> = (0..sentences).map(|_| rng.random_range(3..=7)).collect();
    corpus_with_lengths(&lengths, seed)
}

/// Copy of `corpus` with every cell of `level` emptied.
pub fn strip_level(corpus: &Corpus, level: Level) -> Corpus {
    let mut out = corpus.clone();
    for s in &mut out.sentences {
        for t in &mut s.tokens {
            t.set(level, Cell::Empty)
                .expect("empty cell is always valid");
        }
    }
    out
}
