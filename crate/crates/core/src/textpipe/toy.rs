//! Deterministic toy English corpus used for desk-scale experiments.
//!
//! Sentences come from a small phrase grammar (about 180 distinct words,
//! 4 to 14 words per sentence). The bundled file `data/toy_corpus.txt` is
//! `generate(BUNDLED_LINES, BUNDLED_SEED)`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BUNDLED_LINES: usize = 10_000;
pub const BUNDLED_SEED: u64 = 2021;

/// The bundled corpus text, one sentence per line.
pub fn bundled() -> &'static str {
    include_str!("../../data/toy_corpus.txt")
}

const NOUNS: &[&str] = &[
    "parliament", "council", "report", "member", "country", "citizen", "policy", "budget", "market",
    "farmer", "river", "city", "house", "school", "child", "teacher", "road", "bridge", "garden",
    "letter", "law", "vote", "debate", "proposal", "minister", "union", "treaty", "region", "energy",
    "water", "train", "doctor", "worker", "company", "product", "price", "agreement", "question",
    "answer", "commission", "president", "village", "harbour", "forest", "festival", "museum",
    "hospital", "station", "library", "window",
];

const ADJECTIVES: &[&str] = &[
    "new", "old", "small", "large", "important", "difficult", "simple", "european", "national",
    "local", "green", "quiet", "busy", "strong", "fair", "public", "young", "final", "early", "open",
];

const VERBS_PAST: &[&str] = &[
    "approved", "rejected", "discussed", "visited", "opened", "closed", "built", "changed", "signed",
    "supported", "studied", "reviewed", "found", "watched", "helped", "protected", "presented",
    "delayed", "cleaned", "repaired",
];

const VERBS_PRESENT: &[&str] = &[
    "support", "need", "welcome", "expect", "discuss", "protect", "review", "improve", "follow",
    "defend", "accept", "question", "share", "reform", "fund",
];

const PREPOSITIONS: &[&str] = &["in", "near", "for", "with", "from", "behind", "under", "across"];

const NAMES: &[&str] = &[
    "anna", "peter", "maria", "jonas", "elena", "marco", "sofia", "lukas", "clara", "tomas",
];

const ADVERBS: &[&str] = &[
    "quickly", "carefully", "again", "today", "openly", "slowly", "together", "gladly", "rarely",
    "clearly",
];

const TIMES: &[&str] = &[
    "yesterday", "last week", "this morning", "in the evening", "every year", "after the vote",
];

const DAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];

fn pick<'a>(rng: &mut impl Rng, words: &'a [&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

fn sentence(rng: &mut impl Rng) -> String {
    let n = |r: &mut ChaCha8Rng| pick(r, NOUNS);
    let mut r = ChaCha8Rng::seed_from_u64(rng.random());
    let r = &mut r;
    let text = match r.random_range(0..12) {
        0 => format!("the {} {} {} the {}", pick(r, ADJECTIVES), n(r), pick(r, VERBS_PAST), n(r)),
        1 => format!(
            "the {} {} {} the {} {}",
            n(r),
            pick(r, VERBS_PAST),
            pick(r, PREPOSITIONS),
            pick(r, ADJECTIVES),
            n(r)
        ),
        2 => format!("{} {} a {} {}", pick(r, NAMES), pick(r, VERBS_PAST), n(r), pick(r, TIMES)),
        3 => format!(
            "we {} the {} {} the {} {}",
            pick(r, VERBS_PRESENT),
            n(r),
            pick(r, PREPOSITIONS),
            n(r),
            pick(r, TIMES)
        ),
        4 => format!("the {} is {}", n(r), pick(r, ADJECTIVES)),
        5 => format!(
            "{} and {} {} the {} {} {} the {}",
            pick(r, NAMES),
            pick(r, NAMES),
            pick(r, VERBS_PAST),
            pick(r, ADJECTIVES),
            n(r),
            pick(r, PREPOSITIONS),
            n(r)
        ),
        6 => format!(
            "the {} {} of the {} {} {}",
            pick(r, ADJECTIVES),
            n(r),
            n(r),
            pick(r, VERBS_PAST),
            pick(r, ADVERBS)
        ),
        7 => format!("i think that the {} {} {}", n(r), pick(r, VERBS_PRESENT), pick(r, ADVERBS)),
        8 => format!("the {} {} the {} on {}", n(r), pick(r, VERBS_PAST), n(r), pick(r, DAYS)),
        9 => format!("{} said that the {} was {}", pick(r, NAMES), n(r), pick(r, ADJECTIVES)),
        10 => format!(
            "the {} and the {} {} the {} {} {}",
            n(r),
            n(r),
            pick(r, VERBS_PRESENT),
            pick(r, ADJECTIVES),
            n(r),
            pick(r, ADVERBS)
        ),
        _ => format!(
            "on {} the {} {} {} the {} of the {}",
            pick(r, DAYS),
            pick(r, ADJECTIVES),
            n(r),
            pick(r, VERBS_PAST),
            n(r),
            n(r)
        ),
    };
    let mut chars = text.chars();
    let first = chars.next().map(|c| c.to_uppercase().collect::<String>()).unwrap_or_default();
    format!("{first}{}.", chars.as_str())
}

/// `count` sentences, one per line.
pub fn generate(count: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..count {
        out.push_str(&sentence(&mut rng));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::{corpus_from_text, tokenize, MAX_WORDS, MIN_WORDS};

    #[test]
    fn generated_lines_respect_length_filter() {
        for line in generate(500, 1).lines() {
            let n = tokenize(line).len();
            assert!((MIN_WORDS..=MAX_WORDS).contains(&n), "{line}");
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(50, 9), generate(50, 9));
        assert_ne!(generate(50, 9), generate(50, 10));
    }

    #[test]
    fn bundled_file_matches_generator() {
        assert_eq!(bundled(), generate(BUNDLED_LINES, BUNDLED_SEED));
        let c = corpus_from_text(bundled(), 0.1, 0).unwrap();
        assert_eq!(c.len(), BUNDLED_LINES);
    }
}
