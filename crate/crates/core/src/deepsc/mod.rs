//! The semantic transceiver and its CSI-aided training over fading channels.
//!
//! Transmitter: embedding plus positional encoding, transformer blocks
//! (semantic encoder), then two dense layers producing `symbols` reals per
//! token (channel encoder), per-sentence power normalization and an optional
//! finite-bit constellation.
//!
//! Receiver: an optional zero-forcing pre-layer built from the CSI, dense
//! layers with a residual layer norm (channel decoder), transformer blocks
//! and a softmax prediction layer (semantic decoder).
//!
//! Every position is decoded in parallel: the sentence `w₁..w_N END` is sent
//! as `N + 1` symbol rows and each received row is classified into a word.
//! The decoded sentence is the argmax sequence cut at the first END.

pub mod analysis;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelError, ConstellationSpec, ZeroForcing};
use crate::csi::{CsiError, CsiEstimate, CsiMode};
use crate::nncore::graph::fake_quantize_weights;
use crate::nncore::{
    checkpoint, layers, ActivationMode, Checkpoint, DType, Graph, NnError, ParamKind, ParamSet, Partition, Precision,
    Tensor, UniformQuantizer, Var,
};
use crate::textpipe::END;

pub use train::{
    evaluate, grad_norm_variance, observe_activations, train, train_with_link, write_log_csv, EpochLog, EvalConfig, EvalReport, Link,
    TrainConfig, TrainLog,
};
pub(crate) use train::sentence_rngs;

#[derive(Debug, thiserror::Error)]
pub enum DeepScError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Csi(#[from] CsiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransceiverConfig {
    pub vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    /// Hidden width of the transformer feed-forward layers.
    pub ff: usize,
    /// Reals sent per token.
    pub symbols: usize,
}

impl TransceiverConfig {
    /// Desk-scale default: width 64, two blocks per side, four heads.
    pub fn new(vocab: usize) -> Self {
        Self { vocab, dim: 64, heads: 4, enc_blocks: 2, dec_blocks: 2, ff: 256, symbols: 16 }
    }

    /// Receiver table configuration: width 128, 8 heads, 4 decoder blocks.
    pub fn full(vocab: usize) -> Self {
        Self { vocab, dim: 128, heads: 8, enc_blocks: 4, dec_blocks: 4, ff: 512, symbols: 16 }
    }

    pub fn validate(&self) -> Result<(), DeepScError> {
        let bad = |m: String| Err(DeepScError::Config(m));
        if self.vocab < 5 {
            return bad(format!("vocabulary of {} leaves no words besides reserved ids", self.vocab));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("width {} not divisible into {} heads", self.dim, self.heads));
        }
        if self.symbols == 0 || self.symbols % 2 != 0 {
            return bad(format!("symbol count {} must be even and positive", self.symbols));
        }
        if self.ff == 0 {
            return bad("feed-forward width must be positive".into());
        }
        Ok(())
    }

    fn to_meta(&self, ckpt: Checkpoint) -> Checkpoint {
        ckpt.with_meta("vocab", self.vocab)
            .with_meta("dim", self.dim)
            .with_meta("heads", self.heads)
            .with_meta("enc_blocks", self.enc_blocks)
            .with_meta("dec_blocks", self.dec_blocks)
            .with_meta("ff", self.ff)
            .with_meta("symbols", self.symbols)
    }

    fn from_meta(ckpt: &Checkpoint) -> Result<Self, NnError> {
        Ok(Self {
            vocab: ckpt.meta_parse("vocab")?,
            dim: ckpt.meta_parse("dim")?,
            heads: ckpt.meta_parse("heads")?,
            enc_blocks: ckpt.meta_parse("enc_blocks")?,
            dec_blocks: ckpt.meta_parse("dec_blocks")?,
            ff: ckpt.meta_parse("ff")?,
            symbols: ckpt.meta_parse("symbols")?,
        })
    }
}

/// How the model's graphs are executed: numeric precision, fake-quantized
/// weights and activations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Execution {
    pub precision: Precision,
    pub weight_bits: Option<u32>,
    pub activations: Option<BTreeMap<String, UniformQuantizer>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransceiverModel {
    pub config: TransceiverConfig,
    pub params: ParamSet,
    pub constellation: Option<ConstellationSpec>,
    pub execution: Execution,
}

/// Receiver-side processing of one sentence's received symbols.
#[derive(Clone, Debug, Default)]
pub struct ReceiverInput {
    /// Block-diagonal equalizer applied as `Y · Zᵀ`; `None` feeds raw `Y`.
    pub equalizer: Option<Tensor>,
}

fn enc_block(i: usize) -> String {
    format!("enc.block{i}")
}

fn dec_block(i: usize) -> String {
    format!("dec.block{i}")
}

impl TransceiverModel {
    pub fn new(config: TransceiverConfig, seed: u64) -> Result<Self, DeepScError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let c = &config;
        let (beta, alpha) = (Partition::SemanticEncoder, Partition::ChannelEncoder);
        let (delta, chi) = (Partition::ChannelDecoder, Partition::SemanticDecoder);
        layers::init_embedding(&mut p, "enc.embed", c.vocab, c.dim, beta, &mut rng);
        for i in 0..c.enc_blocks {
            layers::init_transformer_block(&mut p, &enc_block(i), c.dim, c.ff, beta, &mut rng);
        }
        layers::init_dense(&mut p, "enc.ch1", c.dim, 2 * c.symbols, alpha, &mut rng);
        layers::init_dense(&mut p, "enc.ch2", 2 * c.symbols, c.symbols, alpha, &mut rng);
        layers::init_dense(&mut p, "dec.dense1", c.symbols, c.dim, delta, &mut rng);
        layers::init_dense(&mut p, "dec.dense2", c.dim, 4 * c.dim, delta, &mut rng);
        layers::init_dense(&mut p, "dec.dense3", 4 * c.dim, c.dim, delta, &mut rng);
        layers::init_layer_norm(&mut p, "dec.ln", c.dim, delta);
        for i in 0..c.dec_blocks {
            layers::init_transformer_block(&mut p, &dec_block(i), c.dim, c.ff, chi, &mut rng);
        }
        layers::init_dense(&mut p, "dec.pred", c.dim, c.vocab, chi, &mut rng);
        Ok(Self { config, params: p, constellation: None, execution: Execution::default() })
    }

    /// A graph configured for this model's execution mode.
    pub fn graph(&self) -> Graph {
        let mut g = Graph::with_precision(self.execution.precision);
        g.set_weight_bits(self.execution.weight_bits);
        if let Some(map) = &self.execution.activations {
            g.set_activation_mode(ActivationMode::Quantize(map.clone()));
        }
        g
    }

    /// Token ids sent for a sentence: the words followed by END.
    pub fn source_ids(&self, tokens: &[u32]) -> Vec<usize> {
        let unk = crate::textpipe::UNK as usize;
        tokens
            .iter()
            .map(|&t| if (t as usize) < self.config.vocab { t as usize } else { unk })
            .chain(std::iter::once(END as usize))
            .collect()
    }

    /// Transmitter graph: ids → power-normalized symbols `[len × symbols]`.
    pub fn encode_graph(&self, g: &mut Graph, ids: &[usize]) -> Result<Var, DeepScError> {
        let c = &self.config;
        let emb = layers::embedding(g, &self.params, "enc.embed", ids)?;
        let emb = g.scale(emb, (c.dim as f64).sqrt());
        let pos = g.constant(layers::positional_encoding(ids.len(), c.dim));
        let mut x = g.add(emb, pos)?;
        for i in 0..c.enc_blocks {
            x = layers::transformer_block(g, &self.params, &enc_block(i), x, c.heads)?;
        }
        let h = layers::dense(g, &self.params, "enc.ch1", x)?;
        let h = g.relu(h);
        let s = layers::dense(g, &self.params, "enc.ch2", h)?;
        let s = g.power_normalize(s);
        Ok(match &self.constellation {
            Some(spec) => {
                let q = spec.quantizer();
                g.straight_through(s, move |v| q.fake(v))
            }
            None => s,
        })
    }

    /// Receiver graph: received symbols → per-position word probabilities.
    pub fn decode_graph(&self, g: &mut Graph, y: Var, rx: &ReceiverInput) -> Result<Var, DeepScError> {
        let c = &self.config;
        let y = match &rx.equalizer {
            Some(z) => {
                let z = g.constant(z.clone());
                g.matmul_bt(y, z)?
            }
            None => y,
        };
        let d1 = layers::dense(g, &self.params, "dec.dense1", y)?;
        let d1 = g.relu(d1);
        let d2 = layers::dense(g, &self.params, "dec.dense2", d1)?;
        let d2 = g.relu(d2);
        let d3 = layers::dense(g, &self.params, "dec.dense3", d2)?;
        let sum = g.add(d1, d3)?;
        let mut x = layers::layer_norm(g, &self.params, "dec.ln", sum)?;
        for i in 0..c.dec_blocks {
            x = layers::transformer_block(g, &self.params, &dec_block(i), x, c.heads)?;
        }
        let logits = layers::dense(g, &self.params, "dec.pred", x)?;
        Ok(g.softmax(logits))
    }

    /// `X = C_α(S_β(s))`. Out-of-vocabulary ids are sent as UNK.
    pub fn encode(&self, tokens: &[u32]) -> Result<Tensor, DeepScError> {
        let mut g = self.graph();
        let x = self.encode_graph(&mut g, &self.source_ids(tokens))?;
        Ok(g.value(x).clone())
    }

    /// Builds the receiver input for a CSI estimate. Returns `Ok(None)` in
    /// the equalizer slot when the estimated channel is too ill-conditioned
    /// to invert, so the caller can fall back to raw `Y` and count it.
    pub fn receiver_input(&self, csi: &CsiEstimate) -> Result<(ReceiverInput, bool), DeepScError> {
        match (&csi.h, csi.mode) {
            (None, CsiMode::None) => Ok((ReceiverInput::default(), false)),
            (None, mode) => Err(DeepScError::Config(format!("CSI mode {mode} without a channel estimate"))),
            (Some(h), _) => match ZeroForcing::new(h) {
                Ok(zf) => Ok((ReceiverInput { equalizer: Some(zf.block_operator(self.config.symbols)?) }, false)),
                Err(ChannelError::Singular { .. }) => Ok((ReceiverInput::default(), true)),
                Err(e) => Err(e.into()),
            },
        }
    }

    /// Decodes received symbols, zero-forcing with the CSI first when present.
    pub fn decode(&self, y: &Tensor, csi: &CsiEstimate) -> Result<Vec<u32>, DeepScError> {
        let (rx, _) = self.receiver_input(csi)?;
        self.decode_with(y, &rx)
    }

    pub fn decode_with(&self, y: &Tensor, rx: &ReceiverInput) -> Result<Vec<u32>, DeepScError> {
        let mut g = self.graph();
        let yv = g.constant(y.clone());
        let probs = self.decode_graph(&mut g, yv, rx)?;
        Ok(greedy(g.value(probs)))
    }

    /// Weight count excluding biases and norm parameters.
    pub fn weight_count(&self) -> usize {
        self.params.weight_count()
    }

    /// Parameters as stored for inference: masked and, when weight bits are
    /// set, fake-quantized.
    pub fn effective_params(&self) -> ParamSet {
        let mut p = self.params.clone();
        if let Some(bits) = self.execution.weight_bits {
            for (_, e) in p.iter_mut() {
                if e.kind == ParamKind::Weight {
                    let mask = e.mask.clone();
                    fake_quantize_weights(e.tensor.data_mut(), mask.as_deref(), bits);
                }
            }
        }
        p
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.config.to_meta(Checkpoint::new(self.params.clone())).with_meta("model", "transceiver");
        if let Some(c) = &self.constellation {
            ckpt = ckpt
                .with_meta("constellation_bits", c.m_bits)
                .with_meta("constellation_min", c.x_min)
                .with_meta("constellation_max", c.x_max);
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, DeepScError> {
        let config = TransceiverConfig::from_meta(&ckpt)?;
        config.validate()?;
        let constellation = if ckpt.meta.contains_key("constellation_bits") {
            Some(ConstellationSpec::new(
                ckpt.meta_parse("constellation_bits")?,
                ckpt.meta_parse("constellation_min")?,
                ckpt.meta_parse("constellation_max")?,
            )?)
        } else {
            None
        };
        let reference = Self::new(config.clone(), 0)?;
        for name in reference.params.names() {
            ckpt.params.tensor(name)?;
        }
        Ok(Self { config, params: ckpt.params, constellation, execution: Execution::default() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DeepScError> {
        Ok(checkpoint::save(path, &self.to_checkpoint(), DType::F32)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DeepScError> {
        Self::from_checkpoint(checkpoint::load(path)?)
    }
}

/// Calibrates an m-bit constellation on the encoder outputs of `sentences`
/// (one EMA update per batch) and installs it on the model.
pub fn calibrate_model_constellation(
    model: &mut TransceiverModel,
    sentences: &[crate::textpipe::Sentence],
    batch: usize,
    m_bits: u32,
    ema_c: f64,
) -> Result<ConstellationSpec, DeepScError> {
    if batch == 0 {
        return Err(DeepScError::Config("calibration batch size must be positive".into()));
    }
    let mut plain = model.clone();
    plain.constellation = None;
    let batches = sentences
        .chunks(batch)
        .map(|chunk| {
            let mut values = Vec::new();
            for s in chunk {
                values.extend_from_slice(plain.encode(&s.tokens)?.data());
            }
            Ok(values)
        })
        .collect::<Result<Vec<_>, DeepScError>>()?;
    let spec = crate::channel::calibrate_constellation(batches.iter().map(Vec::as_slice), m_bits, ema_c)?;
    model.constellation = Some(spec);
    Ok(spec)
}

/// Argmax per row, cut at the first END.
pub fn greedy(probs: &Tensor) -> Vec<u32> {
    let mut out = Vec::new();
    for r in 0..probs.rows() {
        let row = probs.row(r);
        let best = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc })
            .0 as u32;
        if best == END {
            break;
        }
        out.push(best);
    }
    out
}

/// Draws a value uniformly from `[lo, hi]` (or `lo` when the range is a point).
pub(crate) fn draw_snr(range: (f64, f64), rng: &mut impl Rng) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{transmit, ChannelRealization};
    use std::collections::BTreeSet;

    fn tiny() -> TransceiverModel {
        let cfg = TransceiverConfig { vocab: 12, dim: 8, heads: 2, enc_blocks: 1, dec_blocks: 1, ff: 16, symbols: 4 };
        TransceiverModel::new(cfg, 3).unwrap()
    }

    fn perfect(h: crate::channel::CMatrix) -> CsiEstimate {
        CsiEstimate { mode: CsiMode::Perfect, estimator: "perfect", h: Some(h), snr_db: 0.0 }
    }

    #[test]
    fn encode_is_deterministic_and_normalized() {
        let m = tiny();
        let a = m.encode(&[4, 5, 6]).unwrap();
        assert_eq!(a, m.encode(&[4, 5, 6]).unwrap());
        assert_eq!(a.shape(), &[4, 4]);
        assert!((a.power() - 1.0).abs() < 0.01);
    }

    #[test]
    fn oov_maps_to_unk() {
        let m = tiny();
        assert_eq!(m.source_ids(&[4, 99]), vec![4, 3, 2]);
    }

    #[test]
    fn constellation_limits_levels() {
        let mut m = tiny();
        m.constellation = Some(ConstellationSpec::new(4, -2.5, 2.5).unwrap());
        let x = m.encode(&[4, 5, 6, 7, 8, 9, 10, 11]).unwrap();
        for col in 0..x.cols() {
            let levels: BTreeSet<u64> = (0..x.rows()).map(|r| x.get(r, col).to_bits()).collect();
            assert!(levels.len() <= 16);
        }
    }

    #[test]
    fn identity_channel_zf_is_noop() {
        let m = tiny();
        let x = m.encode(&[4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = transmit(&x, &ChannelRealization::identity(1), 10.0, &mut rng).unwrap();
        let none = CsiEstimate { mode: CsiMode::None, estimator: "none", h: None, snr_db: 10.0 };
        let eye = crate::channel::CMatrix::identity(1, 1);
        assert_eq!(m.decode(&y, &perfect(eye)).unwrap(), m.decode(&y, &none).unwrap());
    }

    #[test]
    fn noiseless_zf_restores_encoder_output() {
        let m = tiny();
        let x = m.encode(&[4, 5, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = crate::channel::ChannelModel::sample(&crate::channel::Rayleigh::default(), 2, &mut rng).unwrap();
        let y = ch.apply(&x).unwrap();
        let (rx, failed) = m.receiver_input(&perfect(ch.h.clone())).unwrap();
        assert!(!failed);
        let z = rx.equalizer.unwrap();
        let back = crate::nncore::graph::matmul_bt(y.data(), z.data(), 4, 4, 4);
        for (a, b) in back.iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_csi_is_config_error() {
        let m = tiny();
        let y = m.encode(&[4]).unwrap();
        let bad = CsiEstimate { mode: CsiMode::Rough, estimator: "ls", h: None, snr_db: 0.0 };
        assert!(matches!(m.decode(&y, &bad), Err(DeepScError::Config(_))));
    }

    #[test]
    fn greedy_stops_at_end() {
        let p = Tensor::new(vec![3, 5], vec![0., 0., 0., 0., 1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1.]).unwrap();
        assert_eq!(greedy(&p), vec![4]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = tiny();
        m.constellation = Some(ConstellationSpec::new(4, -2.0, 2.0).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        checkpoint::save(&path, &m.to_checkpoint(), DType::F64).unwrap();
        assert_eq!(TransceiverModel::from_checkpoint(checkpoint::load(&path).unwrap()).unwrap(), m);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = TransceiverConfig::new(100);
        cfg.heads = 5;
        assert!(TransceiverModel::new(cfg, 0).is_err());
        let mut cfg = TransceiverConfig::new(100);
        cfg.symbols = 3;
        assert!(cfg.validate().is_err());
    }
}
