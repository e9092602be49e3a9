//! Clipped n-gram precision BLEU with brevity penalty.

use std::collections::HashMap;

use super::TextError;

/// Floor applied to zero n-gram precisions.
pub const SMOOTHING_EPS: f64 = 1e-9;

pub const DEFAULT_MAX_N: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bleu {
    max_n: usize,
}

impl Default for Bleu {
    fn default() -> Self {
        Self { max_n: DEFAULT_MAX_N }
    }
}

/// Per-order clipped match and candidate n-gram totals, plus lengths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NgramStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub ref_totals: Vec<u64>,
    pub cand_len: u64,
    pub ref_len: u64,
}

impl NgramStats {
    fn merge(&mut self, other: &NgramStats) {
        if self.matches.is_empty() {
            *self = other.clone();
            return;
        }
        for n in 0..self.matches.len() {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
            self.ref_totals[n] += other.ref_totals[n];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    fn score(&self) -> f64 {
        if self.cand_len == 0 || self.ref_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0usize;
        for n in 0..self.matches.len() {
            // an order neither side can form carries no information
            if self.totals[n] == 0 && self.ref_totals[n] == 0 {
                continue;
            }
            orders += 1;
            let p = if self.matches[n] == 0 {
                SMOOTHING_EPS
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            };
            log_sum += p.ln();
        }
        if orders == 0 {
            return 0.0;
        }
        let c = self.cand_len as f64;
        let r = self.ref_len as f64;
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        (bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0)
    }
}

fn ngram_counts<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

impl Bleu {
    pub fn new(max_n: usize) -> Result<Self, TextError> {
        if max_n == 0 {
            return Err(TextError::Argument("BLEU order must be at least 1".into()));
        }
        Ok(Self { max_n })
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn stats<T: Eq + std::hash::Hash>(&self, candidate: &[T], reference: &[T]) -> NgramStats {
        let mut s = NgramStats {
            matches: vec![0; self.max_n],
            totals: vec![0; self.max_n],
            ref_totals: vec![0; self.max_n],
            cand_len: candidate.len() as u64,
            ref_len: reference.len() as u64,
        };
        for n in 1..=self.max_n {
            let cand = ngram_counts(candidate, n);
            let refc = ngram_counts(reference, n);
            s.matches[n - 1] = cand.iter().map(|(g, &c)| c.min(*refc.get(g).unwrap_or(&0))).sum();
            s.totals[n - 1] = cand.values().sum();
            s.ref_totals[n - 1] = refc.values().sum();
        }
        s
    }

    /// Sentence-level score. An empty candidate or reference scores 0.
    pub fn sentence<T: Eq + std::hash::Hash>(&self, candidate: &[T], reference: &[T]) -> f64 {
        self.stats(candidate, reference).score()
    }

    /// Corpus-level score from pooled n-gram counts.
    pub fn corpus<'a, T: Eq + std::hash::Hash + 'a>(
        &self,
        pairs: impl IntoIterator<Item = (&'a [T], &'a [T])>,
    ) -> f64 {
        let mut total = NgramStats::default();
        for (c, r) in pairs {
            total.merge(&self.stats(c, r));
        }
        total.score()
    }
}

/// BLEU of one candidate against one reference.
pub fn bleu<T: Eq + std::hash::Hash>(candidate: &[T], reference: &[T], max_n: usize) -> Result<f64, TextError> {
    if reference.is_empty() {
        return Err(TextError::Argument("empty reference".into()));
    }
    Ok(Bleu::new(max_n)?.sentence(candidate, reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_is_one() {
        let s = w("the cat sat on the mat");
        assert_eq!(bleu(&s, &s, 4).unwrap(), 1.0);
        let short = w("a b c");
        assert_eq!(bleu(&short, &short, 4).unwrap(), 1.0);
    }

    #[test]
    fn clipped_unigram() {
        let c = w("the the the the");
        let r = w("the cat sat down");
        assert!((bleu(&c, &r, 1).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        let r = w("a b c d");
        assert_eq!(bleu::<&str>(&[], &r, 4).unwrap(), 0.0);
        assert!(bleu(&r, &[], 4).is_err());
        assert!(Bleu::new(0).is_err());
    }

    #[test]
    fn brevity_penalty_applies() {
        let r = w("a b c d e f g h");
        let c = w("a b c d");
        let expected = (1.0f64 - 2.0).exp();
        assert!((bleu(&c, &r, 1).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_precision_is_smoothed_not_zero() {
        let r = w("a b c d");
        let c = w("a x c y");
        let s = bleu(&c, &r, 2).unwrap();
        assert!(s > 0.0 && s < 1e-3);
    }

    #[test]
    fn corpus_pools_counts() {
        let b = Bleu::new(1).unwrap();
        let r1 = w("a b c d");
        let c1 = w("a b x y");
        let r2 = w("e f g h");
        let c2 = w("e f g h");
        let score = b.corpus([(c1.as_slice(), r1.as_slice()), (c2.as_slice(), r2.as_slice())]);
        assert!((score - 6.0 / 8.0).abs() < 1e-12);
    }
}
