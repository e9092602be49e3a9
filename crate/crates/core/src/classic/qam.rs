//! Gray-coded square 64-QAM with unit average symbol energy.
//!
//! Six bits per symbol: the first three select the in-phase level, the last
//! three the quadrature level. Each axis is an 8-PAM with levels
//! `{−7, −5, …, 7}/√42` labelled by the binary-reflected Gray code, so
//! neighbouring levels differ in one bit.

use num_complex::Complex64;

pub const BITS_PER_SYMBOL: usize = 6;
const LEVELS: usize = 8;
/// Mean of `I² + Q²` over the unnormalized grid.
const GRID_ENERGY: f64 = 42.0;

fn scale() -> f64 {
    GRID_ENERGY.sqrt().recip()
}

fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

fn level_of_label(label: usize) -> usize {
    (0..LEVELS).find(|&i| gray(i) == label).expect("3-bit label")
}

fn amplitude(level: usize) -> f64 {
    (2.0 * level as f64 - 7.0) * scale()
}

fn nearest_level(x: f64) -> usize {
    let idx = ((x / scale() + 7.0) / 2.0).round();
    idx.clamp(0.0, 7.0) as usize
}

fn label(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b))
}

/// Zero-pads to a multiple of six bits.
pub fn modulate(bits: &[bool]) -> Vec<Complex64> {
    bits.chunks(BITS_PER_SYMBOL)
        .map(|c| {
            let mut six = [false; BITS_PER_SYMBOL];
            six[..c.len()].copy_from_slice(c);
            let i = level_of_label(label(&six[..3]));
            let q = level_of_label(label(&six[3..]));
            Complex64::new(amplitude(i), amplitude(q))
        })
        .collect()
}

/// Hard nearest-neighbour decision, axis by axis.
pub fn demodulate(symbols: &[Complex64]) -> Vec<bool> {
    let mut out = Vec::with_capacity(symbols.len() * BITS_PER_SYMBOL);
    for s in symbols {
        for axis in [s.re, s.im] {
            let g = gray(nearest_level(axis));
            out.extend((0..3).rev().map(|b| (g >> b) & 1 == 1));
        }
    }
    out
}

/// All 64 constellation points, indexed by their 6-bit label.
pub fn constellation() -> Vec<Complex64> {
    (0..64usize)
        .map(|v| {
            let bits: Vec<bool> = (0..6).rev().map(|b| (v >> b) & 1 == 1).collect();
            modulate(&bits)[0]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_energy_and_gray_neighbours() {
        let pts = constellation();
        let e: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / 64.0;
        assert!((e - 1.0).abs() < 1e-12);
        let d_min = 2.0 * scale();
        for (a, pa) in pts.iter().enumerate() {
            for (b, pb) in pts.iter().enumerate() {
                if ((pa - pb).norm() - d_min).abs() < 1e-9 {
                    assert_eq!((a ^ b).count_ones(), 1, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn noiseless_round_trip_and_padding() {
        let bits: Vec<bool> = (0..600).map(|i| (i * 7 + i / 3) % 5 < 2).collect();
        assert_eq!(demodulate(&modulate(&bits)), bits);
        let short = [true, false, true, true];
        let syms = modulate(&short);
        assert_eq!(syms.len(), 1);
        assert_eq!(demodulate(&syms), vec![true, false, true, true, false, false]);
    }

    #[test]
    fn decisions_saturate_outside_grid() {
        let far = Complex64::new(10.0, -10.0);
        let near = Complex64::new(amplitude(7), amplitude(0));
        assert_eq!(demodulate(&[far]), demodulate(&[near]));
    }
}
