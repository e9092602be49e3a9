//! Learned CSI refinement: a four-layer ReLU network that predicts the LS
//! estimation noise and subtracts it.
//!
//! The network sees the real form `[Re(H) row-major, Im(H) row-major]` plus
//! the LS error standard deviation `s` implied by the pilot SNR, and outputs
//! `H_rough − s·f(H_rough, s)`. Scaling the correction by `s` makes the
//! refined estimate fall back to LS as the noise vanishes. Training loss is
//! `½‖H_refine − H‖_F²`.

use std::path::Path;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ls_error_variance, ls_estimate, observe_pilots, pilot_matrix, CsiError};
use crate::channel::{CMatrix, ChannelModel};
use crate::nncore::{checkpoint, layers, Adam, Checkpoint, DType, Graph, ParamSet, Partition, Tensor};

const LAYERS: [&str; 4] = ["den.l1", "den.l2", "den.l3", "den.l4"];

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of pairs held out to select the best epoch.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { hidden: 64, epochs: 40, batch: 64, lr: 2e-3, holdout: 0.1, seed: 0 }
    }
}

/// One training example: an LS estimate and the channel it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiPair {
    pub rough: CMatrix,
    pub truth: CMatrix,
    pub snr_db: f64,
}

/// Draws channels and LS estimates at SNRs uniform on `snr_range` (dB).
pub fn generate_pairs(
    model: &dyn ChannelModel,
    antennas: usize,
    count: usize,
    snr_range: (f64, f64),
    rng: &mut dyn RngCore,
) -> Result<Vec<CsiPair>, CsiError> {
    let (lo, hi) = snr_range;
    if !(lo <= hi) {
        return Err(CsiError::Argument(format!("empty SNR range [{lo}, {hi}]")));
    }
    let p = pilot_matrix(antennas);
    (0..count)
        .map(|_| {
            let ch = model.sample(antennas, rng).map_err(|e| CsiError::Argument(e.to_string()))?;
            let snr_db = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            let rough = ls_estimate(&observe_pilots(&ch, &p, snr_db, rng), &p)?;
            Ok(CsiPair { rough, truth: ch.h, snr_db })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserReport {
    pub train_loss: Vec<f64>,
    pub holdout_loss: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub params: ParamSet,
    antennas: usize,
    hidden: usize,
}

fn flatten(h: &CMatrix) -> Vec<f64> {
    let (r, c) = h.shape();
    let mut out = Vec::with_capacity(2 * r * c);
    for part in 0..2 {
        for i in 0..r {
            for j in 0..c {
                let z = h[(i, j)];
                out.push(if part == 0 { z.re } else { z.im });
            }
        }
    }
    out
}

/// Standard deviation of one complex LS error entry.
fn noise_level(snr_db: f64, antennas: usize) -> f64 {
    ls_error_variance(snr_db, &pilot_matrix(antennas)).sqrt()
}

fn unflatten(v: &[f64], n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |i, j| num_complex::Complex64::new(v[i * n + j], v[n * n + i * n + j]))
}

impl Denoiser {
    /// Fresh network; the output layer starts at zero so the untrained model
    /// returns its input.
    pub fn new(antennas: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = 2 * antennas * antennas;
        let mut params = ParamSet::new();
        layers::init_dense(&mut params, LAYERS[0], w + 1, hidden, Partition::Aux, rng);
        layers::init_dense(&mut params, LAYERS[1], hidden, hidden, Partition::Aux, rng);
        layers::init_dense(&mut params, LAYERS[2], hidden, hidden, Partition::Aux, rng);
        layers::init_dense_zero(&mut params, LAYERS[3], hidden, w, Partition::Aux);
        Self { params, antennas, hidden }
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    fn width(&self) -> usize {
        2 * self.antennas * self.antennas
    }

    fn check(&self, h: &CMatrix) -> Result<(), CsiError> {
        let (rows, cols) = h.shape();
        if rows != self.antennas || cols != self.antennas {
            return Err(CsiError::Shape { expected: self.antennas, rows, cols });
        }
        Ok(())
    }

    fn forward(&self, g: &mut Graph, rough: &[CMatrix], snr_db: &[f64]) -> Result<crate::nncore::Var, CsiError> {
        let w = self.width();
        let n = rough.len();
        let levels: Vec<f64> = snr_db.iter().map(|&snr| noise_level(snr, self.antennas)).collect();
        let x = g.constant(Tensor::new(vec![n, w], rough.iter().flat_map(flatten).collect())?);
        let features: Vec<f64> = rough
            .iter()
            .zip(&levels)
            .flat_map(|(h, &l)| flatten(h).into_iter().chain(std::iter::once(l)))
            .collect();
        let mut h = g.constant(Tensor::new(vec![n, w + 1], features)?);
        for name in &LAYERS[..3] {
            h = layers::dense(g, &self.params, name, h)?;
            h = g.relu(h);
        }
        let noise = layers::dense(g, &self.params, LAYERS[3], h)?;
        let scale = levels.iter().flat_map(|&l| std::iter::repeat_n(l, w)).collect();
        let scale = g.constant(Tensor::new(vec![n, w], scale)?);
        let noise = g.mul(noise, scale)?;
        Ok(g.sub(x, noise)?)
    }

    /// Refines a batch of LS estimates taken at the given pilot SNRs.
    pub fn refine_batch(&self, rough: &[CMatrix], snr_db: &[f64]) -> Result<Vec<CMatrix>, CsiError> {
        for h in rough {
            self.check(h)?;
        }
        if rough.len() != snr_db.len() {
            return Err(CsiError::Argument(format!("{} estimates but {} SNR values", rough.len(), snr_db.len())));
        }
        if rough.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, rough, snr_db)?;
        Ok(g.value(out).data().chunks(self.width()).map(|v| unflatten(v, self.antennas)).collect())
    }

    /// `H_refine = model(H_rough)`.
    pub fn refine(&self, rough: &CMatrix, snr_db: f64) -> Result<CMatrix, CsiError> {
        Ok(self.refine_batch(std::slice::from_ref(rough), &[snr_db])?.remove(0))
    }

    /// Mean of `½‖H_refine − H‖_F²` over the pairs.
    pub fn loss(&self, pairs: &[CsiPair]) -> Result<f64, CsiError> {
        if pairs.is_empty() {
            return Err(CsiError::Argument("no pairs".into()));
        }
        let mut total = 0.0;
        for chunk in pairs.chunks(512) {
            let rough: Vec<CMatrix> = chunk.iter().map(|p| p.rough.clone()).collect();
            let snr: Vec<f64> = chunk.iter().map(|p| p.snr_db).collect();
            for (r, p) in self.refine_batch(&rough, &snr)?.iter().zip(chunk) {
                total += 0.5 * (r - &p.truth).norm_squared();
            }
        }
        Ok(total / pairs.len() as f64)
    }

    fn batch_step(&mut self, batch: &[&CsiPair], opt: &mut Adam) -> Result<f64, CsiError> {
        let mut g = Graph::new();
        let rough: Vec<CMatrix> = batch.iter().map(|p| p.rough.clone()).collect();
        let snr: Vec<f64> = batch.iter().map(|p| p.snr_db).collect();
        let refined = self.forward(&mut g, &rough, &snr)?;
        let truth: Vec<f64> = batch.iter().flat_map(|p| flatten(&p.truth)).collect();
        let t = g.constant(Tensor::new(vec![batch.len(), self.width()], truth)?);
        let diff = g.sub(refined, t)?;
        let sq = g.sum_squares(diff);
        let loss = g.scale(sq, 0.5 / batch.len() as f64);
        let value = g.value(loss).data()[0];
        g.backward(loss, &mut self.params)?;
        opt.step(&mut self.params)?;
        Ok(value)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone())
            .with_meta("model", "csi-denoiser")
            .with_meta("antennas", self.antennas)
            .with_meta("hidden", self.hidden)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, CsiError> {
        let antennas = ckpt.meta_parse("antennas")?;
        let hidden = ckpt.meta_parse("hidden")?;
        for name in LAYERS {
            ckpt.params.tensor(&format!("{name}.w"))?;
        }
        Ok(Self { params: ckpt.params, antennas, hidden })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CsiError> {
        Ok(checkpoint::save(path, &self.to_checkpoint(), DType::F64)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CsiError> {
        Self::from_checkpoint(checkpoint::load(path)?)
    }
}

/// Trains a denoiser on `pairs`, keeping the parameters of the epoch with
/// the lowest held-out loss.
pub fn train_denoiser(pairs: &[CsiPair], cfg: &DenoiserConfig) -> Result<(Denoiser, DenoiserReport), CsiError> {
    let first = pairs.first().ok_or_else(|| CsiError::Argument("empty training stream".into()))?;
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(CsiError::Argument("epochs and batch size must be positive".into()));
    }
    if pairs.len() < 1000 {
        warn!("denoiser trained on only {} pairs", pairs.len());
    }
    let antennas = first.truth.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Denoiser::new(antennas, cfg.hidden, &mut rng);
    for p in pairs {
        model.check(&p.rough)?;
        model.check(&p.truth)?;
    }
    let n_hold = ((pairs.len() as f64 * cfg.holdout).round() as usize).min(pairs.len() - 1);
    let (hold, train) = pairs.split_at(n_hold);
    let mut order: Vec<&CsiPair> = train.iter().collect();
    let mut opt = Adam::new(cfg.lr);
    let mut report = DenoiserReport { train_loss: Vec::new(), holdout_loss: Vec::new(), best_epoch: 0 };
    let mut best = (f64::INFINITY, model.params.clone());
    for epoch in 0..cfg.epochs {
        // cosine decay lets the final epochs settle below the Adam noise floor
        opt.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos());
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            sum += model.batch_step(batch, &mut opt)? * batch.len() as f64;
        }
        let train_loss = sum / order.len() as f64;
        let hold_loss = if hold.is_empty() { train_loss } else { model.loss(hold)? };
        debug!("denoiser epoch {epoch}: train {train_loss:.5} holdout {hold_loss:.5}");
        if !hold_loss.is_finite() {
            return Err(CsiError::Config(format!("denoiser diverged at epoch {epoch}")));
        }
        report.train_loss.push(train_loss);
        report.holdout_loss.push(hold_loss);
        if hold_loss < best.0 {
            best = (hold_loss, model.params.clone());
            report.best_epoch = epoch;
        }
    }
    model.params = best.1;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Rayleigh;

    #[test]
    fn flatten_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = Rayleigh::default().sample(3, &mut rng).unwrap().h;
        assert_eq!(unflatten(&flatten(&h), 3), h);
    }

    #[test]
    fn untrained_model_is_identity_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Denoiser::new(2, 8, &mut rng);
        let h = Rayleigh::default().sample(2, &mut rng).unwrap().h;
        assert_eq!(d.refine(&h, 3.0).unwrap(), h);
        let wrong = CMatrix::zeros(3, 3);
        assert!(matches!(d.refine(&wrong, 3.0), Err(CsiError::Shape { .. })));
    }

    #[test]
    fn empty_stream_rejected() {
        assert!(train_denoiser(&[], &DenoiserConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Denoiser::new(1, 4, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("den.ckpt");
        d.save(&path).unwrap();
        assert_eq!(Denoiser::load(&path).unwrap(), d);
    }
}
