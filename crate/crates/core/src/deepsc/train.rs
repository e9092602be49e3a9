//! CSI-aided training, evaluation and gradient-noise measurement.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{draw_snr, greedy, DeepScError, TransceiverModel};
use crate::channel::{gaussian_noise, noise_variance, ChannelModel};
use crate::csi::{estimator_for, CsiContext, CsiEstimator, CsiMode, Denoiser};
use crate::nncore::{ActivationMode, Adam, Graph, Partition, Tensor, Var};
use crate::textpipe::{Bleu, Sentence};

/// Channel, antenna count and CSI estimator a sentence travels through.
#[derive(Clone, Debug)]
pub struct Link {
    pub channel: Arc<dyn ChannelModel>,
    pub antennas: usize,
    pub csi: Arc<dyn CsiEstimator>,
}

impl Link {
    /// Link using the default estimator for `mode`.
    pub fn new(
        channel: Arc<dyn ChannelModel>,
        antennas: usize,
        mode: CsiMode,
        denoiser: Option<Arc<Denoiser>>,
    ) -> Result<Self, DeepScError> {
        let ctx = CsiContext { prior: channel.prior(), denoiser };
        let csi = estimator_for(mode, &ctx)?;
        Ok(Self { channel, antennas, csi })
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub csi_mode: CsiMode,
    pub channel: Arc<dyn ChannelModel>,
    pub antennas: usize,
    /// Per-batch SNR is drawn uniformly from this range (dB).
    pub snr_db: (f64, f64),
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    /// Needed for `CsiMode::Refined`.
    pub denoiser: Option<Arc<Denoiser>>,
    /// Train on at most this many sentences per epoch.
    pub max_sentences: Option<usize>,
    /// Held-out sentences scored after each epoch; 0 skips the BLEU column.
    pub log_bleu_sentences: usize,
}

impl TrainConfig {
    pub fn new(csi_mode: CsiMode, channel: Arc<dyn ChannelModel>) -> Self {
        Self {
            csi_mode,
            channel,
            antennas: 1,
            snr_db: (0.0, 18.0),
            batch: 32,
            epochs: 10,
            lr: 1e-3,
            seed: 0,
            clip_norm: Some(5.0),
            denoiser: None,
            max_sentences: None,
            log_bleu_sentences: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DeepScError> {
        let bad = |m: String| Err(DeepScError::Config(m));
        let (lo, hi) = self.snr_db;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return bad(format!("empty SNR range [{lo}, {hi}]"));
        }
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch size must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.antennas == 0 {
            return bad("antenna count must be positive".into());
        }
        Ok(())
    }

    pub fn link(&self) -> Result<Link, DeepScError> {
        Link::new(self.channel.clone(), self.antennas, self.csi_mode, self.denoiser.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// `NaN` when per-epoch scoring is disabled.
    pub bleu: f64,
    pub csi_mode: CsiMode,
    /// Mean SNR drawn over the epoch's batches.
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Sentences whose channel estimate could not be inverted (raw `Y` fed).
    pub zf_failures: usize,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.loss)
    }
}

pub fn write_log_csv(log: &TrainLog, path: impl AsRef<Path>) -> Result<(), DeepScError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,loss,bleu,csi_mode,snr_db,seed")?;
    for e in &log.epochs {
        let bleu = if e.bleu.is_nan() { String::new() } else { format!("{:.6}", e.bleu) };
        writeln!(f, "{},{:.6},{},{},{:.3},{}", e.epoch, e.loss, bleu, e.csi_mode, e.snr_db, e.seed)?;
    }
    f.flush()?;
    Ok(())
}

/// Independent RNG streams for one sentence: channel and noise, then pilots.
pub(crate) fn sentence_rngs(seed: u64, index: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut data = ChaCha8Rng::seed_from_u64(seed);
    data.set_stream(2 * index + 2);
    let mut pilots = ChaCha8Rng::seed_from_u64(seed);
    pilots.set_stream(2 * index + 3);
    (data, pilots)
}

struct Forward {
    probs: Var,
    ids: Vec<usize>,
    zf_failed: bool,
}

/// Encode, pass through one channel draw, equalize and decode inside `g`.
fn link_forward(
    model: &TransceiverModel,
    g: &mut Graph,
    tokens: &[u32],
    link: &Link,
    snr_db: f64,
    data_rng: &mut ChaCha8Rng,
    pilot_rng: &mut ChaCha8Rng,
) -> Result<Forward, DeepScError> {
    let ids = model.source_ids(tokens);
    let x = model.encode_graph(g, &ids)?;
    let ch = link.channel.sample(link.antennas, data_rng)?;
    let est = link.csi.estimate(&ch, snr_db, pilot_rng)?;
    let op = g.constant(ch.block_operator(model.config.symbols)?);
    let hx = g.matmul_bt(x, op)?;
    let shape = g.value(hx).shape().to_vec();
    let noise = gaussian_noise(g.value(hx).len(), noise_variance(snr_db), data_rng);
    let n = g.constant(Tensor::new(shape, noise)?);
    let y = g.add(hx, n)?;
    let (rx, zf_failed) = model.receiver_input(&est)?;
    let probs = model.decode_graph(g, y, &rx)?;
    Ok(Forward { probs, ids, zf_failed })
}

/// One batch: summed two-term CE over all positions divided by the number
/// of positions. Returns the loss node and the ZF failure count.
fn batch_loss(
    model: &TransceiverModel,
    g: &mut Graph,
    batch: &[&Sentence],
    link: &Link,
    snr_db: f64,
    data_rng: &mut ChaCha8Rng,
    pilot_rng: &mut ChaCha8Rng,
) -> Result<(Var, usize), DeepScError> {
    let positions: usize = batch.iter().map(|s| s.tokens.len() + 1).sum();
    let scale = 1.0 / positions as f64;
    let mut terms = Vec::with_capacity(batch.len());
    let mut failures = 0;
    for s in batch {
        let f = link_forward(model, g, &s.tokens, link, snr_db, data_rng, pilot_rng)?;
        failures += usize::from(f.zf_failed);
        terms.push(g.ce_loss_scaled(f.probs, &f.ids, scale)?);
    }
    Ok((g.add_all(&terms)?, failures))
}

/// Trains `model` in place. Each sentence sees its own channel draw; the
/// receiver equalizes it with the estimate prescribed by `cfg.csi_mode`.
pub fn train(
    model: &mut TransceiverModel,
    train_set: &[Sentence],
    held_out: &[Sentence],
    cfg: &TrainConfig,
) -> Result<TrainLog, DeepScError> {
    train_with_link(model, train_set, held_out, cfg, &cfg.link()?)
}

/// [`train`] over an explicit link, e.g. with a non-default CSI estimator.
/// The link's channel and antennas take precedence over those in `cfg`.
pub fn train_with_link(
    model: &mut TransceiverModel,
    train_set: &[Sentence],
    held_out: &[Sentence],
    cfg: &TrainConfig,
    link: &Link,
) -> Result<TrainLog, DeepScError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(DeepScError::Config("empty training set".into()));
    }
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pilot_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pilot_rng.set_stream(1);
    let mut opt = Adam::new(cfg.lr);
    opt.clip_norm = cfg.clip_norm;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let per_epoch = cfg.max_sentences.unwrap_or(usize::MAX).min(train_set.len());
    let mut log = TrainLog::default();
    let eval_snr = 0.5 * (cfg.snr_db.0 + cfg.snr_db.1);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut data_rng);
        let (mut loss_sum, mut batches, mut snr_sum) = (0.0, 0usize, 0.0);
        for chunk in order[..per_epoch].chunks(cfg.batch) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let snr = draw_snr(cfg.snr_db, &mut data_rng);
            let mut g = model.graph();
            let (loss, failures) = batch_loss(model, &mut g, &batch, link, snr, &mut data_rng, &mut pilot_rng)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(DeepScError::Diverged { epoch, loss: value });
            }
            g.backward(loss, &mut model.params)?;
            opt.step(&mut model.params)?;
            log.zf_failures += failures;
            loss_sum += value;
            snr_sum += snr;
            batches += 1;
        }
        let bleu = if cfg.log_bleu_sentences > 0 && !held_out.is_empty() {
            let n = cfg.log_bleu_sentences.min(held_out.len());
            let eval = EvalConfig { snr_db: eval_snr, seed: cfg.seed, ..EvalConfig::default() };
            evaluate(model, &held_out[..n], link, &eval)?.corpus_bleu
        } else {
            f64::NAN
        };
        let entry = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            bleu,
            csi_mode: cfg.csi_mode,
            snr_db: snr_sum / batches as f64,
            seed: cfg.seed,
        };
        log::debug!("epoch {epoch}: loss {:.4} bleu {:.4}", entry.loss, entry.bleu);
        log.epochs.push(entry);
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub snr_db: f64,
    pub seed: u64,
    pub max_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { snr_db: 12.0, seed: 0, max_n: crate::textpipe::DEFAULT_MAX_N }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// BLEU from n-gram counts pooled over all sentences.
    pub corpus_bleu: f64,
    /// Mean of per-sentence BLEU.
    pub mean_bleu: f64,
    /// Fraction of positions (words and END) whose argmax is correct.
    pub token_accuracy: f64,
    /// Fraction of sentences recovered exactly.
    pub exact_match: f64,
    pub sentences: usize,
    pub zf_failures: usize,
    /// Decoded token sequences in input order.
    pub decoded: Vec<Vec<u32>>,
}

/// Sends every sentence through `link` at a fixed SNR and scores the
/// decoded text. Sentence `i` draws its channel, noise and pilots from
/// streams derived from `(cfg.seed, i)`, so results do not depend on thread
/// scheduling and two CSI modes see identical channels and noise.
pub fn evaluate(
    model: &TransceiverModel,
    sentences: &[Sentence],
    link: &Link,
    cfg: &EvalConfig,
) -> Result<EvalReport, DeepScError> {
    let bleu = Bleu::new(cfg.max_n).map_err(|e| DeepScError::Config(e.to_string()))?;
    let per_sentence: Vec<(Vec<u32>, usize, usize, bool)> = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (mut data, mut pilots) = sentence_rngs(cfg.seed, i as u64);
            let mut g = model.graph();
            let f = link_forward(model, &mut g, &s.tokens, link, cfg.snr_db, &mut data, &mut pilots)?;
            let probs = g.value(f.probs);
            let correct = (0..probs.rows()).filter(|&r| argmax(probs.row(r)) == f.ids[r]).count();
            Ok((greedy(probs), correct, f.ids.len(), f.zf_failed))
        })
        .collect::<Result<_, DeepScError>>()?;
    let n = sentences.len().max(1) as f64;
    let mut report = EvalReport { sentences: sentences.len(), ..EvalReport::default() };
    let (mut correct, mut positions, mut exact, mut bleu_sum) = (0, 0, 0, 0.0);
    for ((decoded, c, p, failed), s) in per_sentence.iter().zip(sentences) {
        correct += c;
        positions += p;
        exact += usize::from(decoded == &s.tokens);
        bleu_sum += bleu.sentence(decoded, &s.tokens);
        report.zf_failures += usize::from(*failed);
    }
    report.corpus_bleu = bleu.corpus(per_sentence.iter().zip(sentences).map(|(d, s)| (&d.0[..], &s.tokens[..])));
    report.mean_bleu = bleu_sum / n;
    report.token_accuracy = correct as f64 / positions.max(1) as f64;
    report.exact_match = exact as f64 / n;
    report.decoded = per_sentence.into_iter().map(|d| d.0).collect();
    Ok(report)
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc }).0
}

/// Population variance of the semantic-encoder gradient norm over
/// `batches` consecutive batches, without updating the model. Channel and
/// noise draws depend only on `seed`, so two modes see the same draws.
pub fn grad_norm_variance(
    model: &TransceiverModel,
    sentences: &[Sentence],
    link: &Link,
    snr_db: f64,
    batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<f64, DeepScError> {
    if batches == 0 || batch_size == 0 || sentences.is_empty() {
        return Err(DeepScError::Config("need at least one non-empty batch".into()));
    }
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pilot_rng = ChaCha8Rng::seed_from_u64(seed);
    pilot_rng.set_stream(1);
    let mut norms = Vec::with_capacity(batches);
    for b in 0..batches {
        let batch: Vec<&Sentence> =
            (0..batch_size).map(|i| &sentences[(b * batch_size + i) % sentences.len()]).collect();
        let mut params = model.params.clone();
        let mut g = model.graph();
        let (loss, _) = batch_loss(model, &mut g, &batch, link, snr_db, &mut data_rng, &mut pilot_rng)?;
        g.backward(loss, &mut params)?;
        norms.push(params.grad_norm(Partition::SemanticEncoder));
    }
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    Ok(norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / norms.len() as f64)
}

/// Per-point activation ranges of one forward pass over `batch`.
pub fn observe_activations(
    model: &TransceiverModel,
    batch: &[Sentence],
    link: &Link,
    snr_db: f64,
    seed: u64,
) -> Result<BTreeMap<String, (f64, f64)>, DeepScError> {
    let mut plain = model.clone();
    plain.execution.activations = None;
    let mut g = plain.graph();
    g.set_activation_mode(ActivationMode::Observe);
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pilot_rng = ChaCha8Rng::seed_from_u64(seed);
    pilot_rng.set_stream(1);
    for s in batch {
        link_forward(&plain, &mut g, &s.tokens, link, snr_db, &mut data_rng, &mut pilot_rng)?;
    }
    Ok(g.observed_ranges().clone())
}
