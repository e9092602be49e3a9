//! Fading channels, transmission `Y = HX + N`, zero-forcing and
//! finite-bit constellation quantization.
//!
//! A complex `n × n` channel acts on blocks of `2n` reals laid out as
//! `[Re(x₁..xₙ), Im(x₁..xₙ)]`. A token's symbol vector is cut into such
//! blocks, so its width must be a multiple of `2n`.
//!
//! Noise is Gaussian with variance `10^(−snr/10)` per real dimension; the
//! transmitter normalizes its signal to unit power per real dimension.

mod constellation;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::nncore::Tensor;
use crate::registry::{check_keys, parse_args, Registry};

pub use constellation::{calibrate_constellation, constellation_quantize_dequantize, ConstellationSpec};

/// Largest accepted condition number of `HᴴH` for zero-forcing.
pub const ZF_COND_LIMIT: f64 = 1e8;

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("channel is singular for zero-forcing (cond(HᴴH) ≈ {cond:.3e})")]
    Singular { cond: f64 },
    #[error("degenerate constellation range [{min}, {max}]")]
    DegenerateRange { min: f64, max: f64 },
}

pub type CMatrix = DMatrix<Complex64>;

/// Per-entry complex Gaussian prior `CN(mean, var)` of a channel model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntryPrior {
    pub mean: Complex64,
    pub var: f64,
}

/// One block-fading draw of the channel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub model: String,
}

impl ChannelRealization {
    pub fn identity(antennas: usize) -> Self {
        Self { h: CMatrix::identity(antennas, antennas), model: "awgn".into() }
    }

    pub fn antennas(&self) -> usize {
        self.h.nrows()
    }

    /// The `2n × 2n` real form `[Re −Im; Im Re]`.
    pub fn real_matrix(&self) -> DMatrix<f64> {
        expand_complex(&self.h)
    }

    /// Block-diagonal operator of size `width × width` applying `H` to every
    /// `2n` block of a row vector (row-major, `row · Opᵀ`).
    pub fn block_operator(&self, width: usize) -> Result<Tensor, ChannelError> {
        block_diag(&self.real_matrix(), width)
    }

    /// Noiseless `HX`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor, ChannelError> {
        apply_blocks(&self.real_matrix(), x)
    }
}

/// Real-valued expansion `[Re −Im; Im Re]` of a complex matrix.
pub fn expand_complex(h: &CMatrix) -> DMatrix<f64> {
    let (r, c) = h.shape();
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = h[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

fn block_diag(m: &DMatrix<f64>, width: usize) -> Result<Tensor, ChannelError> {
    let b = m.nrows();
    if width == 0 || width % b != 0 {
        return Err(ChannelError::Dimension(format!("symbol width {width} is not a multiple of {b}")));
    }
    let mut data = vec![0.0; width * width];
    for blk in (0..width).step_by(b) {
        for i in 0..b {
            for j in 0..b {
                data[(blk + i) * width + blk + j] = m[(i, j)];
            }
        }
    }
    Ok(Tensor::new(vec![width, width], data).expect("square operator"))
}

fn apply_blocks(m: &DMatrix<f64>, x: &Tensor) -> Result<Tensor, ChannelError> {
    let b = m.nrows();
    if x.is_empty() || x.len() % b != 0 {
        return Err(ChannelError::Dimension(format!("{} reals do not split into blocks of {b}", x.len())));
    }
    let mut out = vec![0.0; x.len()];
    for (xs, ys) in x.data().chunks(b).zip(out.chunks_mut(b)) {
        for (i, y) in ys.iter_mut().enumerate() {
            *y = (0..b).map(|j| m[(i, j)] * xs[j]).sum();
        }
    }
    Ok(Tensor::new(x.shape().to_vec(), out).expect("same shape"))
}

/// Noise variance per real dimension for an SNR in dB.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub fn gaussian_noise(len: usize, var: f64, rng: &mut (impl Rng + ?Sized)) -> Vec<f64> {
    let sd = var.sqrt();
    (0..len).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `Y = HX + N`.
pub fn transmit(
    x: &Tensor,
    ch: &ChannelRealization,
    snr_db: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Tensor, ChannelError> {
    let mut y = ch.apply(x)?;
    let noise = gaussian_noise(y.len(), noise_variance(snr_db), rng);
    for (v, n) in y.data_mut().iter_mut().zip(noise) {
        *v += n;
    }
    Ok(y)
}

fn condition_of_gram(h: &CMatrix) -> f64 {
    let sv = h.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).powi(2)
    }
}

/// Zero-forcing equalizer `(HᴴH)⁻¹Hᴴ` in real-expanded form.
#[derive(Clone, Debug)]
pub struct ZeroForcing {
    real: DMatrix<f64>,
    cond: f64,
}

impl ZeroForcing {
    pub fn new(h: &CMatrix) -> Result<Self, ChannelError> {
        let cond = condition_of_gram(h);
        if !(cond < ZF_COND_LIMIT) {
            return Err(ChannelError::Singular { cond });
        }
        let hh = h.adjoint();
        let gram_inv = (&hh * h).try_inverse().ok_or(ChannelError::Singular { cond })?;
        Ok(Self { real: expand_complex(&(gram_inv * hh)), cond })
    }

    /// Condition number of `HᴴH`.
    pub fn condition(&self) -> f64 {
        self.cond
    }

    pub fn apply(&self, y: &Tensor) -> Result<Tensor, ChannelError> {
        apply_blocks(&self.real, y)
    }

    pub fn block_operator(&self, width: usize) -> Result<Tensor, ChannelError> {
        block_diag(&self.real, width)
    }
}

/// `Ỹ = (HᴴH)⁻¹HᴴY`.
pub fn zero_forcing(y: &Tensor, h: &CMatrix) -> Result<Tensor, ChannelError> {
    ZeroForcing::new(h)?.apply(y)
}

/// Exponential correlation matrix `R[i][j] = ρ^|i−j|`.
pub fn exponential_correlation(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

fn complex_gaussian(rng: &mut (impl Rng + ?Sized), var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    Complex64::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal))
}

/// Scattered component `R^{1/2} W R^{1/2}` with `W` i.i.d. `CN(0, 1)`.
fn scattered(n: usize, rho: f64, rng: &mut (impl Rng + ?Sized)) -> CMatrix {
    let w = CMatrix::from_fn(n, n, |_, _| complex_gaussian(rng, 1.0));
    if rho == 0.0 {
        return w;
    }
    let root = correlation_root(n, rho);
    &root * w * &root
}

fn correlation_root(n: usize, rho: f64) -> CMatrix {
    let eig = exponential_correlation(n, rho).symmetric_eigen();
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let root = &eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose();
    root.map(|v| Complex64::new(v, 0.0))
}

/// A stochastic channel model producing block-fading realizations.
pub trait ChannelModel: Send + Sync + fmt::Debug {
    /// Identifier used in result files, e.g. `rician-2`.
    fn name(&self) -> String;
    fn prior(&self) -> EntryPrior;
    /// Spatial correlation coefficient of the scattered component.
    fn correlation(&self) -> f64 {
        0.0
    }
    fn sample(&self, antennas: usize, rng: &mut dyn RngCore) -> Result<ChannelRealization, ChannelError>;
}

fn check_antennas(n: usize) -> Result<(), ChannelError> {
    if n == 0 {
        return Err(ChannelError::Argument("antenna count must be positive".into()));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<f64, ChannelError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(ChannelError::Argument(format!("correlation {rho} outside [0, 1)")));
    }
    Ok(rho)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Awgn;

impl ChannelModel for Awgn {
    fn name(&self) -> String {
        "awgn".into()
    }

    fn prior(&self) -> EntryPrior {
        EntryPrior { mean: Complex64::new(1.0, 0.0), var: 0.0 }
    }

    fn sample(&self, antennas: usize, _rng: &mut dyn RngCore) -> Result<ChannelRealization, ChannelError> {
        check_antennas(antennas)?;
        Ok(ChannelRealization::identity(antennas))
    }
}

/// Entries `CN(0, 1)`, optionally spatially correlated.
#[derive(Clone, Copy, Debug, Default)]
pub struct Rayleigh {
    rho: f64,
}

impl Rayleigh {
    pub fn new(rho: f64) -> Result<Self, ChannelError> {
        Ok(Self { rho: check_rho(rho)? })
    }
}

impl ChannelModel for Rayleigh {
    fn name(&self) -> String {
        if self.rho == 0.0 {
            "rayleigh".into()
        } else {
            format!("rayleigh-rho{}", self.rho)
        }
    }

    fn prior(&self) -> EntryPrior {
        EntryPrior { mean: Complex64::new(0.0, 0.0), var: 1.0 }
    }

    fn correlation(&self) -> f64 {
        self.rho
    }

    fn sample(&self, antennas: usize, rng: &mut dyn RngCore) -> Result<ChannelRealization, ChannelError> {
        check_antennas(antennas)?;
        Ok(ChannelRealization { h: scattered(antennas, self.rho, rng), model: self.name() })
    }
}

/// Entries `CN(μ, σ²)` with `μ = √(k/(k+1))`, `σ² = 1/(k+1)`.
#[derive(Clone, Copy, Debug)]
pub struct Rician {
    k: f64,
    rho: f64,
}

impl Rician {
    pub fn new(k: f64, rho: f64) -> Result<Self, ChannelError> {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(ChannelError::Argument(format!("Rician factor {k} must be finite and ≥ 0")));
        }
        Ok(Self { k, rho: check_rho(rho)? })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `(μ, σ)` of each entry.
    pub fn mean_and_sd(&self) -> (f64, f64) {
        ((self.k / (self.k + 1.0)).sqrt(), (1.0 / (self.k + 1.0)).sqrt())
    }
}

impl ChannelModel for Rician {
    fn name(&self) -> String {
        if self.rho == 0.0 {
            format!("rician-{}", self.k)
        } else {
            format!("rician-{}-rho{}", self.k, self.rho)
        }
    }

    fn prior(&self) -> EntryPrior {
        let (mu, sd) = self.mean_and_sd();
        EntryPrior { mean: Complex64::new(mu, 0.0), var: sd * sd }
    }

    fn correlation(&self) -> f64 {
        self.rho
    }

    fn sample(&self, antennas: usize, rng: &mut dyn RngCore) -> Result<ChannelRealization, ChannelError> {
        check_antennas(antennas)?;
        let (mu, sd) = self.mean_and_sd();
        let h = scattered(antennas, self.rho, rng).map(|z| z * sd + mu);
        Ok(ChannelRealization { h, model: self.name() })
    }
}

/// Channel models by name: `awgn`, `rayleigh[:rho=..]`, `rician[:k=..,rho=..]`.
pub fn models() -> Registry<(), dyn ChannelModel> {
    let mut r: Registry<(), dyn ChannelModel> = Registry::new("channel model");
    r.register("awgn", |args, _| {
        if !args.is_empty() {
            return Err("takes no arguments".into());
        }
        Ok(Box::new(Awgn))
    });
    r.register("rayleigh", |args, _| {
        let a = parse_args(args, "rho")?;
        check_keys(&a, &["rho"])?;
        Ok(Box::new(Rayleigh::new(a.get("rho").copied().unwrap_or(0.0)).map_err(|e| e.to_string())?))
    });
    r.register("rician", |args, _| {
        let a = parse_args(args, "k")?;
        check_keys(&a, &["k", "rho"])?;
        let k = a.get("k").copied().unwrap_or(2.0);
        Ok(Box::new(Rician::new(k, a.get("rho").copied().unwrap_or(0.0)).map_err(|e| e.to_string())?))
    });
    r
}

/// Looks up a channel model by spec string.
pub fn model(spec: &str) -> Result<Arc<dyn ChannelModel>, ChannelError> {
    models().create(spec, &()).map(Arc::from).map_err(|e| ChannelError::Argument(e.to_string()))
}
