//! Separate source and channel coding baseline.
//!
//! sentence → source code (Huffman or fixed 5-bit) → bytes → Reed–Solomon
//! blocks → bits → 64-QAM → channel → zero-forcing → hard decisions →
//! RS decoding → source decoding → BLEU.
//!
//! Stages are concatenated block by block without interleaving. QAM symbols
//! fill the antennas of one channel use in order; with `n` antennas the
//! symbol stream is zero-padded to a multiple of `n`. One channel draw
//! covers the whole sentence, as in the semantic transceiver.
//!
//! Symbols are sent at amplitude √2 so that every real dimension carries
//! unit power, matching the transceiver's normalization; the SNR is then
//! `Es/N0` per complex symbol.

pub mod qam;
pub mod rs;
pub mod source;

use std::sync::Arc;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{gaussian_noise, noise_variance, ChannelError, ZeroForcing};
use crate::csi::CsiError;
use crate::deepsc::{sentence_rngs, Link};
use crate::nncore::Tensor;
use crate::registry::Registry;
use crate::textpipe::{Bleu, Sentence};

pub use rs::RsCode;
pub use source::{Fixed5Coder, HuffmanCodebook, HuffmanCoder, SourceCoder};

#[derive(Debug, thiserror::Error)]
pub enum ClassicError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Csi(#[from] CsiError),
}

/// Source coders by name, built from training sentences: `huffman`, `fixed5`.
pub fn source_coders() -> Registry<Vec<Sentence>, dyn SourceCoder> {
    let mut r: Registry<Vec<Sentence>, dyn SourceCoder> = Registry::new("source coder");
    r.register("huffman", |_, train| {
        let book = HuffmanCodebook::from_corpus(train).map_err(|e| e.to_string())?;
        Ok(Box::new(HuffmanCoder { book }))
    });
    r.register("fixed5", |_, train| Ok(Box::new(Fixed5Coder::from_corpus(train))));
    r
}

/// A complete baseline: source coder plus RS code.
#[derive(Clone, Debug)]
pub struct Baseline {
    pub coder: Arc<dyn SourceCoder>,
    pub rs: RsCode,
}

impl Baseline {
    /// The two reference systems: `huffman` with RS(7,5) and `fixed5` with
    /// RS(9,7).
    pub fn standard(scheme: &str, train: &[Sentence]) -> Result<Self, ClassicError> {
        let rs = match scheme {
            "huffman" => RsCode::new(7, 5)?,
            "fixed5" => RsCode::new(9, 7)?,
            other => return Err(ClassicError::Argument(format!("unknown baseline scheme `{other}`"))),
        };
        let coder = source_coders()
            .create(scheme, &train.to_vec())
            .map_err(|e| ClassicError::Argument(e.to_string()))?;
        Ok(Self { coder: Arc::from(coder), rs })
    }

    pub fn name(&self) -> String {
        format!("{}-rs{}_{}", self.coder.name(), self.rs.n(), self.rs.k())
    }

    /// Coded bits for one sentence.
    pub fn encode(&self, tokens: &[u32]) -> Vec<bool> {
        let bytes = rs::bits_to_bytes(&self.coder.encode(tokens));
        rs::bytes_to_bits(&self.rs.encode(&bytes))
    }

    /// Inverse of [`Baseline::encode`] on possibly corrupted bits.
    pub fn decode(&self, bits: &[bool]) -> (Option<Vec<u32>>, usize) {
        let (payload, failures) = self.rs.decode(&rs::bits_to_bytes(bits));
        (self.coder.decode(&rs::bytes_to_bits(&payload)), failures)
    }

    /// Sends one sentence through a fresh draw of `link`.
    pub fn transmit(
        &self,
        tokens: &[u32],
        link: &Link,
        snr_db: f64,
        data_rng: &mut ChaCha8Rng,
        pilot_rng: &mut ChaCha8Rng,
    ) -> Result<SentenceOutcome, ClassicError> {
        let coded = self.encode(tokens);
        let symbols = qam::modulate(&coded);
        let n = link.antennas;
        let uses = symbols.len().div_ceil(n);
        let ch = link.channel.sample(n, data_rng)?;
        let est = link.csi.estimate(&ch, snr_db, pilot_rng)?;
        let amp = 2f64.sqrt();
        let mut x = vec![0.0; 2 * n * uses];
        for (k, s) in symbols.iter().enumerate() {
            let (blk, i) = (k / n, k % n);
            x[2 * n * blk + i] = amp * s.re;
            x[2 * n * blk + n + i] = amp * s.im;
        }
        let x = Tensor::new(vec![uses, 2 * n], x).expect("whole blocks");
        let hx = ch.apply(&x)?;
        let noise = gaussian_noise(hx.len(), noise_variance(snr_db), data_rng);
        let y = Tensor::new(hx.shape().to_vec(), hx.data().iter().zip(&noise).map(|(a, b)| a + b).collect())
            .expect("same shape");
        let mut zf_failed = false;
        let eq = match est.h.as_ref().map(ZeroForcing::new) {
            Some(Ok(zf)) => zf.apply(&y)?,
            Some(Err(_)) => {
                zf_failed = true;
                y
            }
            None => y,
        };
        let received: Vec<Complex64> = (0..symbols.len())
            .map(|k| {
                let (blk, i) = (k / n, k % n);
                let d = eq.data();
                Complex64::new(d[2 * n * blk + i], d[2 * n * blk + n + i]) / amp
            })
            .collect();
        let bits = qam::demodulate(&received);
        let (decoded, rs_failures) = self.decode(&bits[..coded.len()]);
        Ok(SentenceOutcome { decoded, rs_failures, zf_failed, coded_bits: coded.len() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceOutcome {
    /// `None` when the source decoder could not parse the bits.
    pub decoded: Option<Vec<u32>>,
    pub rs_failures: usize,
    pub zf_failed: bool,
    pub coded_bits: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaselineReport {
    pub corpus_bleu: f64,
    pub mean_bleu: f64,
    pub exact_match: f64,
    pub sentences: usize,
    /// Sentences the source decoder rejected; they score BLEU 0.
    pub decode_errors: usize,
    /// RS blocks flagged as uncorrectable.
    pub rs_failures: usize,
    pub zf_failures: usize,
    pub mean_coded_bits: f64,
}

/// Scores `baseline` over `sentences`. Sentence `i` uses the same channel,
/// noise and pilot streams as the transceiver's evaluation, so for equal
/// `seed` both systems see the same channel draws.
pub fn baseline_pipeline(
    sentences: &[Sentence],
    baseline: &Baseline,
    link: &Link,
    snr_db: f64,
    seed: u64,
    max_n: usize,
) -> Result<BaselineReport, ClassicError> {
    let bleu = Bleu::new(max_n).map_err(|e| ClassicError::Argument(e.to_string()))?;
    let outcomes: Vec<SentenceOutcome> = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (mut data, mut pilots) = sentence_rngs(seed, i as u64);
            baseline.transmit(&s.tokens, link, snr_db, &mut data, &mut pilots)
        })
        .collect::<Result<_, _>>()?;
    let n = sentences.len().max(1) as f64;
    let empty = Vec::new();
    let hyps: Vec<&[u32]> = outcomes.iter().map(|o| o.decoded.as_ref().unwrap_or(&empty).as_slice()).collect();
    let mut report = BaselineReport { sentences: sentences.len(), ..BaselineReport::default() };
    let mut bleu_sum = 0.0;
    let mut exact = 0usize;
    for ((o, hyp), s) in outcomes.iter().zip(&hyps).zip(sentences) {
        report.decode_errors += usize::from(o.decoded.is_none());
        report.rs_failures += o.rs_failures;
        report.zf_failures += usize::from(o.zf_failed);
        report.mean_coded_bits += o.coded_bits as f64 / n;
        if o.decoded.is_some() {
            bleu_sum += bleu.sentence(hyp, &s.tokens);
            exact += usize::from(*hyp == s.tokens.as_slice());
        }
    }
    report.corpus_bleu = bleu.corpus(hyps.iter().zip(sentences).map(|(h, s)| (*h, &s.tokens[..])));
    report.mean_bleu = bleu_sum / n;
    report.exact_match = exact as f64 / n;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::model;
    use crate::csi::CsiMode;
    use crate::textpipe::{corpus_from_text, toy};

    fn link(spec: &str, antennas: usize, mode: CsiMode) -> Link {
        Link::new(model(spec).unwrap(), antennas, mode, None).unwrap()
    }

    #[test]
    fn noiseless_chain_is_identity() {
        let corpus = corpus_from_text(&toy::bundled(), 0.9, 1).unwrap();
        for scheme in ["huffman", "fixed5"] {
            let b = Baseline::standard(scheme, &corpus.train).unwrap();
            for (spec, antennas) in [("awgn", 1), ("rayleigh", 2)] {
                let l = link(spec, antennas, CsiMode::Perfect);
                let r = baseline_pipeline(&corpus.train[..60], &b, &l, f64::INFINITY, 3, 4).unwrap();
                assert_eq!(r.corpus_bleu, 1.0, "{scheme} {spec}");
                assert_eq!(r.exact_match, 1.0, "{scheme} {spec}");
                assert_eq!(r.decode_errors + r.rs_failures, 0);
            }
        }
    }

    #[test]
    fn source_coder_registry() {
        let corpus = corpus_from_text(&toy::generate(100, 4), 0.9, 1).unwrap();
        let r = source_coders();
        assert_eq!(r.names(), vec!["fixed5", "huffman"]);
        assert!(r.create("lz77", &corpus.train).is_err());
        assert!(Baseline::standard("arith", &corpus.train).is_err());
    }

    #[test]
    fn garbage_is_a_zero_bleu_sentence() {
        let corpus = corpus_from_text(&toy::bundled(), 0.9, 1).unwrap();
        let b = Baseline::standard("fixed5", &corpus.train).unwrap();
        let l = link("awgn", 1, CsiMode::Perfect);
        let r = baseline_pipeline(&corpus.test[..40], &b, &l, -10.0, 1, 4).unwrap();
        assert!(r.corpus_bleu < 0.2);
        assert!(r.rs_failures > 0);
    }
}
