//! Corpus ingestion, tokenization, vocabulary and BLEU scoring.

mod bleu;
pub mod toy;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use bleu::{bleu, Bleu, NgramStats, DEFAULT_MAX_N, SMOOTHING_EPS};

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const END: u32 = 2;
pub const UNK: u32 = 3;
const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

pub const MIN_WORDS: usize = 4;
pub const MAX_WORDS: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("no usable sentences: {total} lines read, {too_short} too short, {too_long} too long")]
    EmptyCorpus { total: usize, too_short: usize, too_long: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("vocabulary file: {0}")]
    Vocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases, turns punctuation into separators and splits on whitespace.
pub fn tokenize(line: &str) -> Vec<String> {
    line.chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Word ↔ id bijection with ids 0..=3 reserved for PAD, START, END, UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary ordered by descending frequency, ties broken
    /// alphabetically.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for w in s {
                *counts.entry(w.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_words(ranked.into_iter().map(|(w, _)| w.to_string()))
    }

    fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())));
        let index = all.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { words: all, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= RESERVED.len()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        self.words.get(id as usize).map_or(RESERVED[UNK as usize], String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Encodes words, counting out-of-vocabulary words mapped to UNK.
    pub fn encode(&self, words: &[String]) -> (Vec<u32>, usize) {
        let mut oov = 0;
        let ids = words
            .iter()
            .map(|w| {
                let id = self.id(w);
                if id == UNK {
                    oov += 1;
                }
                id
            })
            .collect();
        (ids, oov)
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }

    /// One word per line, in id order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TextError> {
        let mut text = self.words.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextError> {
        let text = fs::read_to_string(path)?;
        let words: Vec<String> = text.lines().map(str::to_string).collect();
        if words.len() < RESERVED.len() || words[..RESERVED.len()] != RESERVED {
            return Err(TextError::Vocab("reserved tokens missing from the first lines".into()));
        }
        let v = Self::from_words(words.into_iter().skip(RESERVED.len()));
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<u32>,
    pub raw: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub split_ratio: f64,
    pub vocab: Vocab,
    /// Lines dropped by the length filter.
    pub dropped: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses text (one sentence per line) into a shuffled train/test split.
pub fn corpus_from_text(text: &str, split_ratio: f64, seed: u64) -> Result<Corpus, TextError> {
    if !(0.0..1.0).contains(&split_ratio) {
        return Err(TextError::Argument(format!("split ratio {split_ratio} outside [0, 1)")));
    }
    let mut total = 0;
    let mut too_short = 0;
    let mut too_long = 0;
    let mut kept: Vec<(Vec<String>, String)> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let words = tokenize(line);
        if words.len() < MIN_WORDS {
            too_short += 1;
        } else if words.len() > MAX_WORDS {
            too_long += 1;
        } else {
            kept.push((words, line.trim().to_string()));
        }
    }
    if kept.is_empty() {
        return Err(TextError::EmptyCorpus { total, too_short, too_long });
    }
    let vocab = Vocab::build(kept.iter().map(|(w, _)| w.as_slice()));
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (kept.len() as f64 * split_ratio).round() as usize;
    let to_sentence = |i: usize| {
        let (words, raw) = &kept[i];
        Sentence { tokens: vocab.encode(words).0, raw: raw.clone() }
    };
    let test = order[..n_test].iter().map(|&i| to_sentence(i)).collect();
    let train = order[n_test..].iter().map(|&i| to_sentence(i)).collect();
    Ok(Corpus { train, test, split_ratio, vocab, dropped: too_short + too_long })
}

pub fn load_corpus(path: impl AsRef<Path>, split_ratio: f64, seed: u64) -> Result<Corpus, TextError> {
    let text = fs::read_to_string(path)?;
    corpus_from_text(&text, split_ratio, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(n: usize) -> String {
        (0..n).map(|i| format!("sentence number {i} has five words\n")).collect()
    }

    #[test]
    fn split_of_hundred() {
        let c = corpus_from_text(&lines(100), 0.1, 7).unwrap();
        assert_eq!((c.train.len(), c.test.len()), (90, 10));
    }

    #[test]
    fn short_and_long_lines_dropped() {
        let long = vec!["w"; 31].join(" ");
        let text = format!("only three words\n{long}\nthis one is fine\n");
        let c = corpus_from_text(&text, 0.0, 1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.dropped, 2);
    }

    #[test]
    fn empty_corpus_reports_counts() {
        match corpus_from_text("a b\nc d e\n", 0.1, 0) {
            Err(TextError::EmptyCorpus { total, too_short, too_long }) => {
                assert_eq!((total, too_short, too_long), (2, 2, 0))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_split() {
        let a = corpus_from_text(&lines(50), 0.1, 3).unwrap();
        let b = corpus_from_text(&lines(50), 0.1, 3).unwrap();
        assert_eq!(a, b);
        let c = corpus_from_text(&lines(50), 0.1, 4).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn tokenizer_strips_punctuation() {
        assert_eq!(tokenize("Hello, World! It's fine."), vec!["hello", "world", "it", "s", "fine"]);
    }

    #[test]
    fn reserved_ids_fixed() {
        let v = Vocab::build([vec!["b".to_string(), "a".to_string(), "b".to_string()].as_slice()]);
        assert_eq!(v.word(PAD), "<pad>");
        assert_eq!(v.word(END), "<end>");
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let c = corpus_from_text(&lines(20), 0.1, 0).unwrap();
        c.vocab.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), c.vocab);
    }
}
