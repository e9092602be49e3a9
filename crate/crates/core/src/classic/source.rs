//! Word-level source codes: Huffman and fixed 5-bit with escape.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::ClassicError;
use crate::textpipe::{Sentence, END, UNK};

/// Word-level source code over token ids. Every sentence is followed by END.
pub trait SourceCoder: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn encode(&self, tokens: &[u32]) -> Vec<bool>;
    /// Decodes up to END. Returns `None` when the bits do not form a valid
    /// message (truncated codeword, END never reached).
    fn decode(&self, bits: &[bool]) -> Option<Vec<u32>>;
}

/// Word frequencies of a training set, with END counted once per sentence
/// and UNK present at least once.
pub fn frequencies(sentences: &[Sentence]) -> BTreeMap<u32, u64> {
    let mut f = BTreeMap::new();
    for s in sentences {
        for &t in &s.tokens {
            *f.entry(t).or_insert(0) += 1;
        }
    }
    f.insert(END, sentences.len().max(1) as u64);
    f.entry(UNK).or_insert(1);
    f
}

/// Prefix-free code built from symbol frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct HuffmanCodebook {
    codes: BTreeMap<u32, Vec<bool>>,
    decode_tree: Vec<Node>,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(u32),
    Inner(usize, usize),
}

impl HuffmanCodebook {
    /// Ties between equal weights are broken by creation order, which makes
    /// the code a pure function of the frequency table.
    pub fn from_frequencies(freq: &BTreeMap<u32, u64>) -> Result<Self, ClassicError> {
        if freq.is_empty() {
            return Err(ClassicError::Argument("empty frequency table".into()));
        }
        let mut nodes: Vec<Node> = Vec::new();
        let mut heap = BinaryHeap::new();
        for (&sym, &w) in freq {
            heap.push(Reverse((w, nodes.len())));
            nodes.push(Node::Leaf(sym));
        }
        if nodes.len() == 1 {
            // a lone symbol still needs one bit
            let mut codes = BTreeMap::new();
            let Node::Leaf(sym) = nodes[0] else { unreachable!() };
            codes.insert(sym, vec![false]);
            nodes.push(Node::Inner(0, 0));
            return Ok(Self { codes, decode_tree: nodes });
        }
        while heap.len() > 1 {
            let Reverse((wa, a)) = heap.pop().expect("len > 1");
            let Reverse((wb, b)) = heap.pop().expect("len > 1");
            heap.push(Reverse((wa + wb, nodes.len())));
            nodes.push(Node::Inner(a, b));
        }
        let mut codes = BTreeMap::new();
        let mut stack = vec![(nodes.len() - 1, Vec::new())];
        while let Some((i, prefix)) = stack.pop() {
            match nodes[i] {
                Node::Leaf(sym) => {
                    codes.insert(sym, prefix);
                }
                Node::Inner(a, b) => {
                    let mut left = prefix.clone();
                    left.push(false);
                    let mut right = prefix;
                    right.push(true);
                    stack.push((a, left));
                    stack.push((b, right));
                }
            }
        }
        Ok(Self { codes, decode_tree: nodes })
    }

    pub fn from_corpus(sentences: &[Sentence]) -> Result<Self, ClassicError> {
        Self::from_frequencies(&frequencies(sentences))
    }

    pub fn code(&self, symbol: u32) -> Option<&[bool]> {
        self.codes.get(&symbol).map(Vec::as_slice)
    }

    pub fn lengths(&self) -> BTreeMap<u32, usize> {
        self.codes.iter().map(|(&s, c)| (s, c.len())).collect()
    }

    /// `Σ 2^−len`; equals 1 for a complete tree.
    pub fn kraft_sum(&self) -> f64 {
        self.codes.values().map(|c| 0.5f64.powi(c.len() as i32)).sum()
    }

    /// Symbols in order of appearance; unknown symbols use UNK's codeword.
    pub fn encode_symbols(&self, symbols: &[u32]) -> Vec<bool> {
        let mut out = Vec::new();
        for s in symbols {
            let code = self.codes.get(s).or_else(|| self.codes.get(&UNK)).expect("UNK present");
            out.extend_from_slice(code);
        }
        out
    }

    /// Decodes whole codewords; `stop` ends decoding early.
    fn decode_until(&self, bits: &[bool], stop: Option<u32>) -> (Vec<u32>, bool) {
        let root = self.decode_tree.len() - 1;
        let mut out = Vec::new();
        let mut node = root;
        for &b in bits {
            let Node::Inner(l, r) = self.decode_tree[node] else { unreachable!("cursor rests on inner nodes") };
            node = if b { r } else { l };
            if let Node::Leaf(sym) = self.decode_tree[node] {
                if Some(sym) == stop {
                    return (out, true);
                }
                out.push(sym);
                node = root;
            }
        }
        (out, node == root)
    }

    pub fn decode_symbols(&self, bits: &[bool]) -> Option<Vec<u32>> {
        let (out, complete) = self.decode_until(bits, None);
        complete.then_some(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HuffmanCoder {
    pub book: HuffmanCodebook,
}

impl SourceCoder for HuffmanCoder {
    fn name(&self) -> &'static str {
        "huffman"
    }

    fn encode(&self, tokens: &[u32]) -> Vec<bool> {
        let mut symbols = tokens.to_vec();
        symbols.push(END);
        self.book.encode_symbols(&symbols)
    }

    fn decode(&self, bits: &[bool]) -> Option<Vec<u32>> {
        match self.book.decode_until(bits, Some(END)) {
            (out, true) if bits.len() > 0 => Some(out),
            _ => None,
        }
    }
}

/// Bits of the escape-coded vocabulary index.
pub const ESCAPE_INDEX_BITS: usize = 16;
const FIXED_BITS: usize = 5;
const ESCAPE: u32 = 31;

/// Fixed-length 5-bit code: the 31 most frequent symbols map to codes 0–30,
/// code 31 escapes to a 16-bit vocabulary index.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixed5Coder {
    table: Vec<u32>,
    index: BTreeMap<u32, u32>,
}

fn push_bits(out: &mut Vec<bool>, value: u32, width: usize) {
    for b in (0..width).rev() {
        out.push((value >> b) & 1 == 1);
    }
}

fn read_bits(bits: &[bool], width: usize) -> Option<u32> {
    (bits.len() >= width).then(|| bits[..width].iter().fold(0, |acc, &b| (acc << 1) | u32::from(b)))
}

impl Fixed5Coder {
    /// Ranks symbols by frequency (ties by id).
    pub fn from_frequencies(freq: &BTreeMap<u32, u64>) -> Self {
        let mut ranked: Vec<(u32, u64)> = freq.iter().map(|(&s, &w)| (s, w)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let table: Vec<u32> = ranked.iter().take(ESCAPE as usize).map(|&(s, _)| s).collect();
        let index = table.iter().enumerate().map(|(i, &s)| (s, i as u32)).collect();
        Self { table, index }
    }

    pub fn from_corpus(sentences: &[Sentence]) -> Self {
        Self::from_frequencies(&frequencies(sentences))
    }

    fn encode_symbol(&self, out: &mut Vec<bool>, sym: u32) {
        match self.index.get(&sym) {
            Some(&code) => push_bits(out, code, FIXED_BITS),
            None => {
                push_bits(out, ESCAPE, FIXED_BITS);
                let sym = if sym >> ESCAPE_INDEX_BITS == 0 { sym } else { UNK };
                push_bits(out, sym, ESCAPE_INDEX_BITS);
            }
        }
    }
}

impl SourceCoder for Fixed5Coder {
    fn name(&self) -> &'static str {
        "fixed5"
    }

    fn encode(&self, tokens: &[u32]) -> Vec<bool> {
        let mut out = Vec::new();
        for &t in tokens.iter().chain(std::iter::once(&END)) {
            self.encode_symbol(&mut out, t);
        }
        out
    }

    fn decode(&self, bits: &[bool]) -> Option<Vec<u32>> {
        let mut out = Vec::new();
        let mut pos = 0;
        loop {
            let code = read_bits(&bits[pos..], FIXED_BITS)?;
            pos += FIXED_BITS;
            let sym = if code == ESCAPE {
                let s = read_bits(&bits[pos..], ESCAPE_INDEX_BITS)?;
                pos += ESCAPE_INDEX_BITS;
                s
            } else {
                *self.table.get(code as usize)?
            };
            if sym == END {
                return Some(out);
            }
            out.push(sym);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(tokens: &[u32]) -> Sentence {
        Sentence { tokens: tokens.to_vec(), raw: String::new() }
    }

    #[test]
    fn two_symbol_tree() {
        let freq = BTreeMap::from([(10, 2), (11, 1)]);
        let book = HuffmanCodebook::from_frequencies(&freq).unwrap();
        assert_eq!(book.lengths(), BTreeMap::from([(10, 1), (11, 1)]));
        let bits = book.encode_symbols(&[10, 10, 11]);
        assert_eq!(bits.len(), 3);
        assert_eq!(book.decode_symbols(&bits).unwrap(), vec![10, 10, 11]);
    }

    #[test]
    fn kraft_equality_and_prefix_free() {
        let freq: BTreeMap<u32, u64> = (0..40).map(|i| (i, 1 + (i as u64 * 7) % 13)).collect();
        let book = HuffmanCodebook::from_frequencies(&freq).unwrap();
        assert!((book.kraft_sum() - 1.0).abs() < 1e-12);
        let codes: Vec<&[bool]> = (0..40).map(|i| book.code(i).unwrap()).collect();
        for (i, a) in codes.iter().enumerate() {
            for (j, b) in codes.iter().enumerate() {
                if i != j {
                    assert!(!b.starts_with(a));
                }
            }
        }
    }

    #[test]
    fn single_symbol_gets_one_bit() {
        let book = HuffmanCodebook::from_frequencies(&BTreeMap::from([(4, 3)])).unwrap();
        assert_eq!(book.code(4).unwrap(), &[false]);
        assert_eq!(book.decode_symbols(&[false, false]).unwrap(), vec![4, 4]);
    }

    #[test]
    fn sentence_round_trips() {
        let train = vec![sentence(&[4, 5, 6, 7]), sentence(&[4, 4, 8, 9, 10])];
        let huff = HuffmanCoder { book: HuffmanCodebook::from_corpus(&train).unwrap() };
        let fixed = Fixed5Coder::from_corpus(&train);
        for coder in [&huff as &dyn SourceCoder, &fixed] {
            for s in &train {
                assert_eq!(coder.decode(&coder.encode(&s.tokens)).unwrap(), s.tokens);
            }
        }
        // unseen word becomes UNK under huffman, survives via escape under fixed5
        assert_eq!(huff.decode(&huff.encode(&[4, 99])).unwrap(), vec![4, UNK]);
        assert_eq!(fixed.decode(&fixed.encode(&[4, 99])).unwrap(), vec![4, 99]);
    }

    #[test]
    fn fixed5_escape_layout() {
        let freq: BTreeMap<u32, u64> = (0..40).map(|i| (i, 100 - i as u64)).collect();
        let c = Fixed5Coder::from_frequencies(&freq);
        assert_eq!(c.encode(&[0]).len(), 10);
        assert_eq!(c.encode(&[35]).len(), 5 + 16 + 5 + if c.index.contains_key(&END) { 0 } else { 16 });
        assert!(c.decode(&[true; 3]).is_none());
    }
}
