//! Uniform m-bit affine quantization and EMA range tracking.
//!
//! Shared by weight/activation compression and by the transmit
//! constellation. Rounding is ties-to-even everywhere.

use super::NnError;

pub const MAX_BITS: u32 = 32;

/// Largest code of an m-bit unsigned format, `2^m - 1`.
pub fn max_code(m_bits: u32) -> f64 {
    (2f64).powi(m_bits as i32) - 1.0
}

/// Affine map of `[min, max]` onto integer codes `0..=2^m-1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformQuantizer {
    pub m_bits: u32,
    pub min: f64,
    /// Scale-factor `(2^m - 1) / (max - min)`.
    pub scale: f64,
}

impl UniformQuantizer {
    pub fn from_range(m_bits: u32, min: f64, max: f64) -> Result<Self, NnError> {
        if m_bits == 0 || m_bits > MAX_BITS {
            return Err(NnError::Argument(format!("bit-width {m_bits} outside 1..={MAX_BITS}")));
        }
        if !(min.is_finite() && max.is_finite()) {
            return Err(NnError::Argument(format!("non-finite range [{min}, {max}]")));
        }
        if max <= min {
            return Err(NnError::DegenerateRange { min, max });
        }
        Ok(Self { m_bits, min, scale: max_code(m_bits) / (max - min) })
    }

    pub fn max(&self) -> f64 {
        self.min + max_code(self.m_bits) / self.scale
    }

    /// Quantization step `1/q`.
    pub fn step(&self) -> f64 {
        1.0 / self.scale
    }

    /// Unclamped rounded code; may fall outside the representable range.
    pub fn raw_code(&self, x: f64) -> f64 {
        (self.scale * (x - self.min)).round_ties_even()
    }

    /// Code clamped to `[0, 2^m - 1]`.
    pub fn code(&self, x: f64) -> u32 {
        self.raw_code(x).clamp(0.0, max_code(self.m_bits)) as u32
    }

    pub fn dequantize(&self, code: u32) -> f64 {
        code as f64 / self.scale + self.min
    }

    /// Quantize then dequantize.
    pub fn fake(&self, x: f64) -> f64 {
        self.dequantize(self.code(x))
    }
}

/// Exponential moving average of per-batch minima and maxima.
///
/// The first batch initializes the range; afterwards
/// `x(t+1) = (1 - c) x(t) + c * batch(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeEma {
    pub c: f64,
    pub min: f64,
    pub max: f64,
    pub batches: usize,
}

impl RangeEma {
    pub fn new(c: f64) -> Result<Self, NnError> {
        if !(0.0..=1.0).contains(&c) {
            return Err(NnError::Argument(format!("EMA coefficient {c} outside [0, 1]")));
        }
        Ok(Self { c, min: 0.0, max: 0.0, batches: 0 })
    }

    pub fn update(&mut self, batch_min: f64, batch_max: f64) {
        if self.batches == 0 {
            self.min = batch_min;
            self.max = batch_max;
        } else {
            self.min = (1.0 - self.c) * self.min + self.c * batch_min;
            self.max = (1.0 - self.c) * self.max + self.c * batch_max;
        }
        self.batches += 1;
    }

    pub fn observe(&mut self, values: &[f64]) {
        if values.is_empty() {
            return;
        }
        let (lo, hi) = min_max(values);
        self.update(lo, hi);
    }

    pub fn quantizer(&self, m_bits: u32) -> Result<UniformQuantizer, NnError> {
        if self.batches == 0 {
            return Err(NnError::State("range tracker saw no batches".into()));
        }
        UniformQuantizer::from_range(m_bits, self.min, self.max)
    }
}

pub fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_map_to_extreme_codes() {
        let q = UniformQuantizer::from_range(8, -1.0, 1.0).unwrap();
        assert_eq!(q.code(-1.0), 0);
        assert_eq!(q.code(1.0), 255);
        assert_eq!(q.scale, 127.5);
        // 127.5 rounds to the even neighbour
        assert_eq!(q.code(0.0), 128);
    }

    #[test]
    fn out_of_range_saturates() {
        let q = UniformQuantizer::from_range(4, 0.0, 1.0).unwrap();
        assert_eq!(q.code(-5.0), 0);
        assert_eq!(q.code(5.0), 15);
    }

    #[test]
    fn degenerate_range_is_rejected() {
        assert!(matches!(
            UniformQuantizer::from_range(4, 1.0, 1.0),
            Err(NnError::DegenerateRange { .. })
        ));
    }

    #[test]
    fn ema_arithmetic() {
        let mut e = RangeEma::new(0.5).unwrap();
        e.update(-1.0, 1.0);
        e.update(-3.0, 1.0);
        assert_eq!(e.min, -2.0);

        let mut latest = RangeEma::new(1.0).unwrap();
        latest.update(-1.0, 1.0);
        latest.update(-3.0, 4.0);
        assert_eq!((latest.min, latest.max), (-3.0, 4.0));

        let mut frozen = RangeEma::new(0.0).unwrap();
        frozen.update(-1.0, 1.0);
        frozen.update(-3.0, 4.0);
        assert_eq!((frozen.min, frozen.max), (-1.0, 1.0));
    }

    #[test]
    fn outlier_moves_max_by_c() {
        let mut e = RangeEma::new(0.1).unwrap();
        e.update(-100.0, 100.0);
        e.update(-100.0, 1e4);
        let moved = (e.max - 100.0) / (1e4 - 100.0);
        assert!((moved - 0.1).abs() < 1e-12);
    }
}
