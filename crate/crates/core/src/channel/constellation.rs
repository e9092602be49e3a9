//! Finite-bit constellation: EMA-calibrated range, then quantize–dequantize
//! of the transmitted reals.

use super::ChannelError;
use crate::nncore::{NnError, RangeEma, UniformQuantizer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstellationSpec {
    pub m_bits: u32,
    pub x_min: f64,
    pub x_max: f64,
    /// `(2^m − 1)/(x_max − x_min)`.
    pub q_x: f64,
}

impl ConstellationSpec {
    pub fn new(m_bits: u32, x_min: f64, x_max: f64) -> Result<Self, ChannelError> {
        let q = UniformQuantizer::from_range(m_bits, x_min, x_max).map_err(map_err)?;
        Ok(Self::from(q))
    }

    pub fn quantizer(&self) -> UniformQuantizer {
        UniformQuantizer { m_bits: self.m_bits, min: self.x_min, scale: self.q_x }
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.m_bits
    }
}

impl From<UniformQuantizer> for ConstellationSpec {
    fn from(q: UniformQuantizer) -> Self {
        Self { m_bits: q.m_bits, x_min: q.min, x_max: q.max(), q_x: q.scale }
    }
}

fn map_err(e: NnError) -> ChannelError {
    match e {
        NnError::DegenerateRange { min, max } => ChannelError::DegenerateRange { min, max },
        other => ChannelError::Argument(other.to_string()),
    }
}

/// Tracks the symbol range over calibration batches with EMA coefficient `c`.
pub fn calibrate_constellation<'a>(
    batches: impl IntoIterator<Item = &'a [f64]>,
    m_bits: u32,
    c: f64,
) -> Result<ConstellationSpec, ChannelError> {
    let mut ema = RangeEma::new(c).map_err(map_err)?;
    for b in batches {
        ema.observe(b);
    }
    if ema.batches == 0 {
        return Err(ChannelError::Argument("no calibration batches".into()));
    }
    ema.quantizer(m_bits).map(ConstellationSpec::from).map_err(map_err)
}

/// `X_dq = clamp(round(q_x(X − x_min)), 0, 2^m − 1)/q_x + x_min`.
pub fn constellation_quantize_dequantize(x: &[f64], spec: &ConstellationSpec) -> Vec<f64> {
    let q = spec.quantizer();
    x.iter().map(|&v| q.fake(v)).collect()
}
