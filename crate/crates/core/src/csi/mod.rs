//! Channel state information: pilot-based LS and LMMSE estimation, a learned
//! denoiser that refines rough estimates, and named estimator strategies.
//!
//! Each coherence block carries [`PILOT_BLOCKS`] orthogonal pilot blocks
//! `√2·I` (unit power per real dimension). The LS error `N Pᴴ(PPᴴ)⁻¹` then
//! has complex variance `σ²/PILOT_BLOCKS` per entry, where `σ²` is the
//! per-real-dimension channel noise variance.

mod denoiser;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, RngCore};

use crate::channel::{gaussian_noise, noise_variance, ChannelRealization, CMatrix, EntryPrior};
use crate::nncore::NnError;
use crate::registry::Registry;

pub use denoiser::{generate_pairs, train_denoiser, CsiPair, Denoiser, DenoiserConfig, DenoiserReport};

#[derive(Debug, thiserror::Error)]
pub enum CsiError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: expected {expected}×{expected} channel, got {rows}×{cols}")]
    Shape { expected: usize, rows: usize, cols: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CsiMode {
    Perfect,
    Rough,
    Refined,
    None,
}

impl CsiMode {
    pub const ALL: [CsiMode; 4] = [CsiMode::Perfect, CsiMode::Refined, CsiMode::Rough, CsiMode::None];

    pub fn name(self) -> &'static str {
        match self {
            CsiMode::Perfect => "perfect",
            CsiMode::Rough => "rough",
            CsiMode::Refined => "refined",
            CsiMode::None => "none",
        }
    }

    /// Default estimator realizing this mode.
    pub fn estimator(self) -> &'static str {
        match self {
            CsiMode::Perfect => "perfect",
            CsiMode::Rough => "ls",
            CsiMode::Refined => "refined",
            CsiMode::None => "none",
        }
    }
}

impl fmt::Display for CsiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CsiMode {
    type Err = CsiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "perfect" => Ok(CsiMode::Perfect),
            "rough" => Ok(CsiMode::Rough),
            "refined" => Ok(CsiMode::Refined),
            "none" => Ok(CsiMode::None),
            other => Err(CsiError::Argument(format!("unknown CSI mode `{other}`"))),
        }
    }
}

/// An estimate of `H` together with how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiEstimate {
    pub mode: CsiMode,
    /// Name of the estimator that produced it.
    pub estimator: &'static str,
    pub h: Option<CMatrix>,
    pub snr_db: f64,
}

/// Pilot blocks sent per coherence block.
pub const PILOT_BLOCKS: usize = 2;

/// `[√2·I … √2·I]`, `antennas × (PILOT_BLOCKS·antennas)`.
pub fn pilot_matrix(antennas: usize) -> CMatrix {
    let amp = Complex64::new(2f64.sqrt(), 0.0);
    CMatrix::from_fn(antennas, PILOT_BLOCKS * antennas, |i, j| if j % antennas == i { amp } else { Complex64::ZERO })
}

/// Received pilot block `Y_p = H P + N`.
pub fn observe_pilots(
    ch: &ChannelRealization,
    pilots: &CMatrix,
    snr_db: f64,
    rng: &mut (impl Rng + ?Sized),
) -> CMatrix {
    let clean = &ch.h * pilots;
    let (r, c) = clean.shape();
    let noise = gaussian_noise(2 * r * c, noise_variance(snr_db), rng);
    CMatrix::from_fn(r, c, |i, j| {
        let k = 2 * (i * c + j);
        clean[(i, j)] + Complex64::new(noise[k], noise[k + 1])
    })
}

fn gram_inverse(pilots: &CMatrix) -> Option<CMatrix> {
    (pilots * pilots.adjoint()).try_inverse()
}

/// `H_rough = Y_p Pᴴ(PPᴴ)⁻¹`, which is `Y_p P⁻¹` for square pilots.
pub fn ls_estimate(y_pilot: &CMatrix, pilots: &CMatrix) -> Result<CMatrix, CsiError> {
    let inv = gram_inverse(pilots).ok_or_else(|| CsiError::Argument("pilot matrix is singular".into()))?;
    if y_pilot.ncols() != pilots.ncols() {
        return Err(CsiError::Argument("pilot observation does not match pilot matrix".into()));
    }
    Ok(y_pilot * pilots.adjoint() * inv)
}

/// Complex variance of each LS error entry for the given pilots (the
/// largest over antennas when pilots are not equal-power).
pub fn ls_error_variance(snr_db: f64, pilots: &CMatrix) -> f64 {
    let inv = gram_inverse(pilots).expect("full-rank pilots");
    // rows of N have i.i.d. entries of complex variance 2σ²
    let worst = (0..inv.nrows()).map(|i| inv[(i, i)].re).fold(0.0, f64::max);
    2.0 * noise_variance(snr_db) * worst
}

/// Per-entry Wiener shrinkage `μ + s/(s + e)·(h − μ)` toward the prior mean.
pub fn lmmse_estimate(h_rough: &CMatrix, prior: &EntryPrior, err_var: f64) -> Result<CMatrix, CsiError> {
    if !(prior.var >= 0.0) || !(err_var >= 0.0) {
        return Err(CsiError::Argument(format!(
            "variances must be non-negative (prior {}, error {err_var})",
            prior.var
        )));
    }
    let denom = prior.var + err_var;
    if denom == 0.0 {
        return Ok(h_rough.map(|_| prior.mean));
    }
    let gain = if err_var.is_infinite() { 0.0 } else { prior.var / denom };
    Ok(h_rough.map(|h| prior.mean + (h - prior.mean) * gain))
}

/// Squared Frobenius distance.
pub fn squared_error(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm_squared()
}

/// Per-trial squared error per entry (`‖Ĥ − H‖²/n²`) of the LS, LMMSE and,
/// when a denoiser is given, refined estimates. All estimators see the same
/// channel and pilot noise in each trial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimatorTrials {
    pub ls: Vec<f64>,
    pub lmmse: Vec<f64>,
    pub refined: Vec<f64>,
}

impl EstimatorTrials {
    pub fn mean(errors: &[f64]) -> f64 {
        errors.iter().sum::<f64>() / errors.len().max(1) as f64
    }
}

pub fn estimator_trials(
    model: &dyn crate::channel::ChannelModel,
    antennas: usize,
    snr_db: f64,
    trials: usize,
    denoiser: Option<&Denoiser>,
    rng: &mut dyn RngCore,
) -> Result<EstimatorTrials, CsiError> {
    let p = pilot_matrix(antennas);
    let prior = model.prior();
    let err_var = ls_error_variance(snr_db, &p);
    let entries = (antennas * antennas) as f64;
    let mut truth = Vec::with_capacity(trials);
    let mut rough = Vec::with_capacity(trials);
    for _ in 0..trials {
        let ch = model.sample(antennas, rng).map_err(|e| CsiError::Argument(e.to_string()))?;
        rough.push(ls_estimate(&observe_pilots(&ch, &p, snr_db, rng), &p)?);
        truth.push(ch.h);
    }
    let mut out = EstimatorTrials::default();
    for (r, h) in rough.iter().zip(&truth) {
        out.ls.push(squared_error(r, h) / entries);
        out.lmmse.push(squared_error(&lmmse_estimate(r, &prior, err_var)?, h) / entries);
    }
    if let Some(d) = denoiser {
        let refined = d.refine_batch(&rough, &vec![snr_db; trials])?;
        out.refined = refined.iter().zip(&truth).map(|(r, h)| squared_error(r, h) / entries).collect();
    }
    Ok(out)
}

/// A strategy turning the true channel into the receiver's CSI.
pub trait CsiEstimator: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn mode(&self) -> CsiMode;
    fn estimate(
        &self,
        ch: &ChannelRealization,
        snr_db: f64,
        rng: &mut dyn RngCore,
    ) -> Result<CsiEstimate, CsiError>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectCsi;

impl CsiEstimator for PerfectCsi {
    fn name(&self) -> &'static str {
        "perfect"
    }

    fn mode(&self) -> CsiMode {
        CsiMode::Perfect
    }

    fn estimate(&self, ch: &ChannelRealization, snr_db: f64, _: &mut dyn RngCore) -> Result<CsiEstimate, CsiError> {
        Ok(CsiEstimate { mode: CsiMode::Perfect, estimator: self.name(), h: Some(ch.h.clone()), snr_db })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoCsi;

impl CsiEstimator for NoCsi {
    fn name(&self) -> &'static str {
        "none"
    }

    fn mode(&self) -> CsiMode {
        CsiMode::None
    }

    fn estimate(&self, _: &ChannelRealization, snr_db: f64, _: &mut dyn RngCore) -> Result<CsiEstimate, CsiError> {
        Ok(CsiEstimate { mode: CsiMode::None, estimator: self.name(), h: None, snr_db })
    }
}

fn rough(ch: &ChannelRealization, snr_db: f64, rng: &mut dyn RngCore) -> Result<CMatrix, CsiError> {
    let p = pilot_matrix(ch.antennas());
    ls_estimate(&observe_pilots(ch, &p, snr_db, rng), &p)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LsCsi;

impl CsiEstimator for LsCsi {
    fn name(&self) -> &'static str {
        "ls"
    }

    fn mode(&self) -> CsiMode {
        CsiMode::Rough
    }

    fn estimate(&self, ch: &ChannelRealization, snr_db: f64, rng: &mut dyn RngCore) -> Result<CsiEstimate, CsiError> {
        let h = rough(ch, snr_db, rng)?;
        Ok(CsiEstimate { mode: CsiMode::Rough, estimator: self.name(), h: Some(h), snr_db })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LmmseCsi {
    pub prior: EntryPrior,
}

impl CsiEstimator for LmmseCsi {
    fn name(&self) -> &'static str {
        "lmmse"
    }

    fn mode(&self) -> CsiMode {
        CsiMode::Rough
    }

    fn estimate(&self, ch: &ChannelRealization, snr_db: f64, rng: &mut dyn RngCore) -> Result<CsiEstimate, CsiError> {
        let p = pilot_matrix(ch.antennas());
        let h_rough = ls_estimate(&observe_pilots(ch, &p, snr_db, rng), &p)?;
        let h = lmmse_estimate(&h_rough, &self.prior, ls_error_variance(snr_db, &p))?;
        Ok(CsiEstimate { mode: CsiMode::Rough, estimator: self.name(), h: Some(h), snr_db })
    }
}

#[derive(Clone, Debug)]
pub struct RefinedCsi {
    pub denoiser: Arc<Denoiser>,
}

impl CsiEstimator for RefinedCsi {
    fn name(&self) -> &'static str {
        "refined"
    }

    fn mode(&self) -> CsiMode {
        CsiMode::Refined
    }

    fn estimate(&self, ch: &ChannelRealization, snr_db: f64, rng: &mut dyn RngCore) -> Result<CsiEstimate, CsiError> {
        let h = self.denoiser.refine(&rough(ch, snr_db, rng)?, snr_db)?;
        Ok(CsiEstimate { mode: CsiMode::Refined, estimator: self.name(), h: Some(h), snr_db })
    }
}

/// What estimator factories may draw on.
#[derive(Clone, Debug)]
pub struct CsiContext {
    pub prior: EntryPrior,
    pub denoiser: Option<Arc<Denoiser>>,
}

/// Estimators by name: `perfect`, `ls`, `lmmse`, `refined`, `none`.
pub fn estimators() -> Registry<CsiContext, dyn CsiEstimator> {
    let mut r: Registry<CsiContext, dyn CsiEstimator> = Registry::new("CSI estimator");
    r.register("perfect", |_, _| Ok(Box::new(PerfectCsi)));
    r.register("ls", |_, _| Ok(Box::new(LsCsi)));
    r.register("lmmse", |_, ctx| Ok(Box::new(LmmseCsi { prior: ctx.prior })));
    r.register("refined", |_, ctx| {
        let denoiser = ctx.denoiser.clone().ok_or("needs a trained denoiser")?;
        Ok(Box::new(RefinedCsi { denoiser }))
    });
    r.register("none", |_, _| Ok(Box::new(NoCsi)));
    r
}

/// The default estimator for a training/evaluation mode.
pub fn estimator_for(mode: CsiMode, ctx: &CsiContext) -> Result<Arc<dyn CsiEstimator>, CsiError> {
    estimators()
        .create(mode.estimator(), ctx)
        .map(Arc::from)
        .map_err(|e| CsiError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, Rayleigh};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn noiseless_ls_is_exact() {
        let mut r = rng(0);
        let ch = Rayleigh::default().sample(2, &mut r).unwrap();
        let p = pilot_matrix(2);
        let h = ls_estimate(&observe_pilots(&ch, &p, f64::INFINITY, &mut r), &p).unwrap();
        assert!((h - &ch.h).norm() < 1e-12);
    }

    #[test]
    fn singular_pilots_rejected() {
        let p = CMatrix::zeros(2, 2);
        assert!(ls_estimate(&CMatrix::zeros(2, 2), &p).is_err());
    }

    #[test]
    fn ls_is_reproducible() {
        let ch = Rayleigh::default().sample(2, &mut rng(1)).unwrap();
        let a = LsCsi.estimate(&ch, 5.0, &mut rng(9)).unwrap();
        let b = LsCsi.estimate(&ch, 5.0, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ls_error_variance_matches_pilot_power() {
        let p = pilot_matrix(3);
        assert!((ls_error_variance(0.0, &p) - 1.0 / PILOT_BLOCKS as f64).abs() < 1e-12);
        assert!((ls_error_variance(10.0, &p) - 0.1 / PILOT_BLOCKS as f64).abs() < 1e-12);
        let eye = CMatrix::identity(3, 3);
        assert!((ls_error_variance(0.0, &eye) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lmmse_limits() {
        let prior = EntryPrior { mean: Complex64::new(0.5, 0.0), var: 0.5 };
        let h = CMatrix::from_element(2, 2, Complex64::new(1.3, -0.2));
        let quiet = lmmse_estimate(&h, &prior, 0.0).unwrap();
        assert!((quiet - &h).norm() < 1e-15);
        let loud = lmmse_estimate(&h, &prior, f64::INFINITY).unwrap();
        assert!((loud - CMatrix::from_element(2, 2, prior.mean)).norm() < 1e-15);
        let bad = EntryPrior { var: -1.0, ..prior };
        assert!(lmmse_estimate(&h, &bad, 1.0).is_err());
    }

    #[test]
    fn registry_modes() {
        let ctx = CsiContext { prior: Rayleigh::default().prior(), denoiser: None };
        for (name, mode) in [("perfect", CsiMode::Perfect), ("ls", CsiMode::Rough), ("none", CsiMode::None)] {
            assert_eq!(estimators().create(name, &ctx).unwrap().mode(), mode);
        }
        assert!(estimators().create("refined", &ctx).is_err());
        assert!(estimator_for(CsiMode::Refined, &ctx).is_err());
        assert_eq!("Refined".parse::<CsiMode>().unwrap(), CsiMode::Refined);
    }

    #[test]
    fn perfect_and_none() {
        let ch = Rayleigh::default().sample(2, &mut rng(2)).unwrap();
        let p = PerfectCsi.estimate(&ch, 0.0, &mut rng(0)).unwrap();
        assert_eq!(p.h.as_ref(), Some(&ch.h));
        assert!(NoCsi.estimate(&ch, 0.0, &mut rng(0)).unwrap().h.is_none());
    }
}
