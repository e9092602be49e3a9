//! Model compression: global magnitude pruning, m-bit weight quantization,
//! EMA-calibrated activation quantization with quantization-aware
//! fine-tuning, and the compression ratio ψ.
//!
//! Only `Weight` tensors count as connections. Biases and layer-norm
//! parameters are neither pruned nor counted in `M`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::deepsc::{observe_activations, train, DeepScError, Link, TrainConfig, TrainLog, TransceiverModel};
use crate::nncore::{checkpoint, Checkpoint, DType, NnError, ParamKind, ParamSet, QuantizedTensor, RangeEma, UniformQuantizer};
use crate::textpipe::Sentence;

#[derive(Debug, thiserror::Error)]
pub enum SlimError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    DeepSc(#[from] DeepScError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneConfig {
    /// Sparsity ratio γ in `[0, 1)`.
    pub gamma: f64,
    pub fine_tune_epochs: usize,
}

impl PruneConfig {
    pub fn new(gamma: f64) -> Result<Self, SlimError> {
        check_gamma(gamma)?;
        Ok(Self { gamma, fine_tune_epochs: 0 })
    }
}

fn check_gamma(gamma: f64) -> Result<(), SlimError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(SlimError::Argument(format!("sparsity ratio {gamma} outside [0, 1)")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneSummary {
    /// `w_thre`: the ⌊Mγ⌋-th smallest magnitude (1-based), 0 when that index is 0.
    pub threshold: f64,
    pub total: usize,
    pub pruned: usize,
}

impl PruneSummary {
    pub fn sparsity(&self) -> f64 {
        self.pruned as f64 / self.total.max(1) as f64
    }

    pub fn surviving(&self) -> usize {
        self.total - self.pruned
    }
}

/// Global magnitude pruning over every weight tensor.
///
/// All weights are sorted by `|w|` in one list and the first ⌊Mγ⌋ are
/// masked. Equal magnitudes are ordered by position (name, then index), so
/// exactly ⌊Mγ⌋ connections are removed even with ties. Previously pruned
/// entries take part with magnitude 0.
pub fn prune(params: &ParamSet, gamma: f64) -> Result<(ParamSet, PruneSummary), SlimError> {
    check_gamma(gamma)?;
    let mut out = params.clone();
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    let names: Vec<String> = out.iter().filter(|(_, e)| e.kind == ParamKind::Weight).map(|(n, _)| n.clone()).collect();
    for (t, name) in names.iter().enumerate() {
        let e = out.get(name).expect("listed above");
        for (i, &w) in e.tensor.data().iter().enumerate() {
            let alive = e.mask.as_ref().is_none_or(|m| m[i]);
            all.push((if alive { w.abs() } else { 0.0 }, t, i));
        }
    }
    let total = all.len();
    let count = (total as f64 * gamma).floor() as usize;
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let threshold = if count == 0 { 0.0 } else { all[count - 1].0 };
    for name in &names {
        let e = out.get_mut(name).expect("listed above");
        if e.mask.is_none() {
            e.mask = Some(vec![true; e.tensor.len()]);
        }
    }
    for &(_, t, i) in &all[..count] {
        let e = out.get_mut(&names[t]).expect("listed above");
        e.mask.as_mut().expect("mask created above")[i] = false;
    }
    out.apply_masks();
    Ok((out, PruneSummary { threshold, total, pruned: count }))
}

/// Prunes the model and fine-tunes the surviving weights.
pub fn prune_and_finetune(
    model: &mut TransceiverModel,
    cfg: &PruneConfig,
    train_set: &[Sentence],
    held_out: &[Sentence],
    train_cfg: &TrainConfig,
) -> Result<(PruneSummary, Option<TrainLog>), SlimError> {
    let (params, summary) = prune(&model.params, cfg.gamma)?;
    model.params = params;
    let log = if cfg.fine_tune_epochs > 0 && summary.pruned > 0 {
        let mut tc = train_cfg.clone();
        tc.epochs = cfg.fine_tune_epochs;
        Some(train(model, train_set, held_out, &tc)?)
    } else {
        None
    };
    Ok((summary, log))
}

/// One weight tensor as m-bit codes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLayer {
    /// `None` for a constant layer: all codes are 0 and decode to `constant`.
    pub quantizer: Option<UniformQuantizer>,
    pub constant: f64,
    pub m_bits: u32,
    /// One code per entry; masked entries get code 0 and decode to 0.
    pub codes: Vec<u32>,
    pub mask: Option<Vec<bool>>,
}

impl QuantizedLayer {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if self.mask.as_ref().is_some_and(|m| !m[i]) {
                    0.0
                } else {
                    match &self.quantizer {
                        Some(q) => q.dequantize(c),
                        None => self.constant,
                    }
                }
            })
            .collect()
    }

    /// Storage form: codes of surviving entries with 32-bit range metadata.
    pub fn to_stored(&self) -> QuantizedTensor {
        let codes = self
            .codes
            .iter()
            .enumerate()
            .filter(|(i, _)| self.mask.as_ref().is_none_or(|m| m[*i]))
            .map(|(_, &c)| c)
            .collect();
        match &self.quantizer {
            Some(q) => QuantizedTensor {
                m_bits: self.m_bits,
                min: q.min as f32,
                scale: q.scale as f32,
                degenerate: false,
                codes,
            },
            None => QuantizedTensor {
                m_bits: self.m_bits,
                min: self.constant as f32,
                scale: 0.0,
                degenerate: true,
                codes,
            },
        }
    }
}

/// `W̃ = round(q_w (W − min W))` with `q_w = (2^m − 1)/(max W − min W)`,
/// over the surviving entries of one tensor.
pub fn quantize_layer(data: &[f64], mask: Option<&[bool]>, m_bits: u32) -> Result<QuantizedLayer, SlimError> {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let (lo, hi) = data
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)));
    let mask_vec = mask.map(<[bool]>::to_vec);
    if !(lo < hi) {
        UniformQuantizer::from_range(m_bits, 0.0, 1.0)?;
        let constant = if lo.is_finite() { lo } else { 0.0 };
        return Ok(QuantizedLayer { quantizer: None, constant, m_bits, codes: vec![0; data.len()], mask: mask_vec });
    }
    let q = UniformQuantizer::from_range(m_bits, lo, hi)?;
    let codes = data.iter().enumerate().map(|(i, &w)| if keep(i) { q.code(w) } else { 0 }).collect();
    Ok(QuantizedLayer { quantizer: Some(q), constant: 0.0, m_bits, codes, mask: mask_vec })
}

/// Per-layer quantization of every weight tensor.
pub fn quantize_weights(params: &ParamSet, m_bits: u32) -> Result<BTreeMap<String, QuantizedLayer>, SlimError> {
    params
        .iter()
        .filter(|(_, e)| e.kind == ParamKind::Weight)
        .map(|(name, e)| Ok((name.clone(), quantize_layer(e.tensor.data(), e.mask.as_deref(), m_bits)?)))
        .collect()
}

/// Replaces every weight tensor by its dequantized codes.
pub fn apply_quantized(params: &ParamSet, layers: &BTreeMap<String, QuantizedLayer>) -> ParamSet {
    let mut out = params.clone();
    for (name, layer) in layers {
        if let Some(e) = out.get_mut(name) {
            e.tensor.data_mut().copy_from_slice(&layer.dequantize());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantConfig {
    pub m_bits: u32,
    /// EMA coefficient `c` weighting the newest batch.
    pub ema_c: f64,
    pub calibration_batches: usize,
    pub calibration_batch_size: usize,
}

impl QuantConfig {
    pub fn new(m_bits: u32) -> Self {
        Self { m_bits, ema_c: 0.1, calibration_batches: 8, calibration_batch_size: 32 }
    }
}

/// Result of activation calibration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActivationCalibration {
    /// EMA-smoothed `(x_min, x_max)` per activation point.
    pub ranges: BTreeMap<String, (f64, f64)>,
    /// Quantizers for points with a non-degenerate range.
    pub quantizers: BTreeMap<String, UniformQuantizer>,
}

/// Tracks per-point activation ranges with the EMA recursion over
/// calibration batches and derives m-bit quantizers.
pub fn calibrate_activations(
    model: &TransceiverModel,
    calib: &[Sentence],
    link: &Link,
    snr_db: f64,
    cfg: &QuantConfig,
    seed: u64,
) -> Result<ActivationCalibration, SlimError> {
    if calib.is_empty() || cfg.calibration_batches == 0 || cfg.calibration_batch_size == 0 {
        return Err(SlimError::Argument("calibration needs at least one non-empty batch".into()));
    }
    let mut trackers: BTreeMap<String, RangeEma> = BTreeMap::new();
    for (b, chunk) in calib.chunks(cfg.calibration_batch_size).take(cfg.calibration_batches).enumerate() {
        let observed = observe_activations(model, chunk, link, snr_db, seed.wrapping_add(b as u64))?;
        for (point, (lo, hi)) in observed {
            let t = match trackers.get_mut(&point) {
                Some(t) => t,
                None => trackers.entry(point).or_insert(RangeEma::new(cfg.ema_c)?),
            };
            t.update(lo, hi);
        }
    }
    let mut out = ActivationCalibration::default();
    for (point, t) in trackers {
        out.ranges.insert(point.clone(), (t.min, t.max));
        if let Ok(q) = t.quantizer(cfg.m_bits) {
            out.quantizers.insert(point, q);
        }
    }
    Ok(out)
}

/// Quantization-aware fine-tuning: the forward pass fake-quantizes weights
/// to `m` bits and activations with the calibrated quantizers, the backward
/// pass treats both roundings as identity.
pub fn qat_finetune(
    model: &mut TransceiverModel,
    m_bits: u32,
    activations: &ActivationCalibration,
    train_set: &[Sentence],
    held_out: &[Sentence],
    train_cfg: &TrainConfig,
) -> Result<TrainLog, SlimError> {
    model.execution.weight_bits = Some(m_bits);
    model.execution.activations = Some(activations.quantizers.clone());
    Ok(train(model, train_set, held_out, train_cfg)?)
}

/// ψ = (M × 32)/(M_pruned × m).
pub fn compression_ratio(total: f64, surviving: f64, m_bits: u32) -> Result<f64, SlimError> {
    if !(surviving > 0.0) {
        return Err(SlimError::Argument("no surviving weights".into()));
    }
    if m_bits == 0 {
        return Err(SlimError::Argument("bit-width must be at least 1".into()));
    }
    Ok(total * 32.0 / (surviving * m_bits as f64))
}

/// ψ with `M_pruned = (1 − γ)M`.
pub fn nominal_compression_ratio(gamma: f64, m_bits: u32) -> Result<f64, SlimError> {
    check_gamma(gamma)?;
    compression_ratio(1.0, 1.0 - gamma, m_bits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionReport {
    /// Total weights M (biases and norm parameters excluded).
    pub total_weights: usize,
    /// Surviving weights M_pruned.
    pub surviving_weights: usize,
    pub gamma: f64,
    pub m_bits: u32,
    /// ψ with `M_pruned = (1 − γ)M`.
    pub psi: f64,
    /// ψ from the actual mask counts.
    pub psi_realized: f64,
    pub bleu_before: f64,
    pub bleu_after: f64,
}

impl CompressionReport {
    pub fn new(params: &ParamSet, gamma: f64, m_bits: u32, bleu_before: f64, bleu_after: f64) -> Result<Self, SlimError> {
        let total = params.weight_count();
        let surviving = params.surviving_weight_count();
        Ok(Self {
            total_weights: total,
            surviving_weights: surviving,
            gamma,
            m_bits,
            psi: nominal_compression_ratio(gamma, m_bits)?,
            psi_realized: compression_ratio(total as f64, surviving as f64, m_bits)?,
            bleu_before,
            bleu_after,
        })
    }

    pub const CSV_HEADER: &'static str = "M,M_pruned,gamma,m,psi,psi_realized,bleu_before,bleu_after";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{:.6},{:.6}",
            self.total_weights,
            self.surviving_weights,
            self.gamma,
            self.m_bits,
            self.psi,
            self.psi_realized,
            self.bleu_before,
            self.bleu_after
        )
    }
}

/// Checkpoint holding every weight tensor as packed m-bit codes.
pub fn compressed_checkpoint(model: &TransceiverModel, m_bits: u32) -> Result<Checkpoint, SlimError> {
    let layers = quantize_weights(&model.params, m_bits)?;
    let mut ckpt = model.to_checkpoint().with_meta("weight_bits", m_bits);
    ckpt.params = apply_quantized(&model.params, &layers);
    ckpt.quantized = layers.iter().map(|(n, l)| (n.clone(), l.to_stored())).collect();
    Ok(ckpt)
}

pub fn save_compressed(model: &TransceiverModel, m_bits: u32, path: impl AsRef<Path>) -> Result<(), SlimError> {
    Ok(checkpoint::save(path, &compressed_checkpoint(model, m_bits)?, DType::F32)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{Partition, Tensor};

    fn set(values: &[f64]) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![1, values.len()], values.to_vec()).unwrap(), Partition::ChannelEncoder, ParamKind::Weight);
        p.insert("b", Tensor::new(vec![1, 1], vec![0.01]).unwrap(), Partition::ChannelEncoder, ParamKind::Bias);
        p
    }

    #[test]
    fn threshold_example() {
        let (p, s) = prune(&set(&[0.3, -0.1, 0.4, 0.2]), 0.5).unwrap();
        assert_eq!(s.threshold, 0.2);
        assert_eq!(s.pruned, 2);
        assert_eq!(p.tensor("w").unwrap().data(), &[0.3, 0.0, 0.4, 0.0]);
        assert_eq!(p.tensor("b").unwrap().data(), &[0.01]);
        assert_eq!(s.sparsity(), 0.5);
    }

    #[test]
    fn gamma_zero_is_noop_and_one_rejected() {
        let p = set(&[0.3, -0.1]);
        let (q, s) = prune(&p, 0.0).unwrap();
        assert_eq!(s.threshold, 0.0);
        assert_eq!(q.tensor("w").unwrap(), p.tensor("w").unwrap());
        assert!(prune(&p, 1.0).is_err());
    }

    #[test]
    fn ties_still_prune_exact_count() {
        let (_, s) = prune(&set(&[0.5; 10]), 0.35).unwrap();
        assert_eq!(s.pruned, 3);
    }

    #[test]
    fn endpoint_codes_and_ties_to_even() {
        let l = quantize_layer(&[-1.0, 1.0, 0.0], None, 8).unwrap();
        let q = l.quantizer.unwrap();
        assert_eq!(q.scale, 127.5);
        assert_eq!(l.codes, vec![0, 255, 128]);
    }

    #[test]
    fn constant_layer_is_degenerate() {
        let l = quantize_layer(&[0.7, 0.7], None, 4).unwrap();
        assert!(l.quantizer.is_none());
        assert_eq!(l.codes, vec![0, 0]);
        assert_eq!(l.dequantize(), vec![0.7, 0.7]);
        assert!(l.to_stored().degenerate);
    }

    #[test]
    fn masked_entries_excluded_from_range() {
        let l = quantize_layer(&[5.0, 0.0, 1.0, 2.0], Some(&[false, true, true, true]), 2).unwrap();
        let q = l.quantizer.unwrap();
        assert_eq!((q.min, q.max()), (0.0, 2.0));
        assert_eq!(l.dequantize()[0], 0.0);
        assert_eq!(l.to_stored().codes.len(), 3);
    }

    #[test]
    fn ratio_errors() {
        assert!(compression_ratio(10.0, 0.0, 8).is_err());
        assert!(compression_ratio(10.0, 5.0, 0).is_err());
        assert_eq!(compression_ratio(10.0, 5.0, 8).unwrap(), 8.0);
    }
}
