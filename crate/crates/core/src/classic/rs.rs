//! Reed–Solomon codes over GF(2⁸), shortened to any `n ≤ 255`.
//!
//! Field polynomial `x⁸+x⁴+x³+x²+1` (0x11d), generator roots `α⁰ … α^(n−k−1)`.
//! A codeword is stored as polynomial coefficients, lowest degree first:
//! `n−k` parity symbols followed by the `k` message symbols. Decoding runs
//! Berlekamp–Massey, a Chien search restricted to the shortened positions,
//! and Forney's formula.

use std::sync::OnceLock;

use super::ClassicError;

const FIELD_POLY: u16 = 0x11d;

struct Tables {
    exp: [u8; 512],
    log: [u8; 256],
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let mut exp = [0u8; 512];
        let mut log = [0u8; 256];
        let mut x: u16 = 1;
        for i in 0..255 {
            exp[i] = x as u8;
            log[x as usize] = i as u8;
            x <<= 1;
            if x & 0x100 != 0 {
                x ^= FIELD_POLY;
            }
        }
        for i in 255..512 {
            exp[i] = exp[i - 255];
        }
        Tables { exp, log }
    })
}

/// GF(2⁸) arithmetic.
pub mod gf {
    use super::tables;

    pub fn mul(a: u8, b: u8) -> u8 {
        if a == 0 || b == 0 {
            return 0;
        }
        let t = tables();
        t.exp[t.log[a as usize] as usize + t.log[b as usize] as usize]
    }

    pub fn inv(a: u8) -> u8 {
        assert!(a != 0, "zero has no inverse");
        let t = tables();
        t.exp[255 - t.log[a as usize] as usize]
    }

    pub fn div(a: u8, b: u8) -> u8 {
        mul(a, inv(b))
    }

    /// `α^e` for any integer exponent.
    pub fn alpha_pow(e: i64) -> u8 {
        tables().exp[e.rem_euclid(255) as usize]
    }

    /// Evaluates a lowest-degree-first polynomial at `x`.
    pub fn eval(poly: &[u8], x: u8) -> u8 {
        poly.iter().rev().fold(0, |acc, &c| mul(acc, x) ^ c)
    }
}

/// An `(n, k)` code correcting `t = ⌊(n−k)/2⌋` symbol errors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsCode {
    n: usize,
    k: usize,
    generator: Vec<u8>,
}

/// Outcome of decoding one block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDecode {
    /// Message symbols; the received ones, uncorrected, when `failed`.
    pub message: Vec<u8>,
    /// Positions (polynomial degrees) that were corrected.
    pub corrected: Vec<usize>,
    pub failed: bool,
}

impl RsCode {
    pub fn new(n: usize, k: usize) -> Result<Self, ClassicError> {
        if n > 255 || k == 0 || k >= n {
            return Err(ClassicError::Argument(format!("RS({n},{k}) needs 0 < k < n ≤ 255")));
        }
        let mut generator = vec![1u8];
        for i in 0..(n - k) {
            // multiply by (x + αⁱ)
            let root = gf::alpha_pow(i as i64);
            let mut next = vec![0u8; generator.len() + 1];
            for (j, &c) in generator.iter().enumerate() {
                next[j] ^= gf::mul(c, root);
                next[j + 1] ^= c;
            }
            generator = next;
        }
        Ok(Self { n, k, generator })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn parity(&self) -> usize {
        self.n - self.k
    }

    pub fn t(&self) -> usize {
        self.parity() / 2
    }

    pub fn generator(&self) -> &[u8] {
        &self.generator
    }

    pub fn encode_block(&self, message: &[u8]) -> Result<Vec<u8>, ClassicError> {
        if message.len() != self.k {
            return Err(ClassicError::Argument(format!("block has {} symbols, expected {}", message.len(), self.k)));
        }
        let p = self.parity();
        // remainder of m(x)·x^p divided by the monic generator
        let mut rem = vec![0u8; p];
        for &m in message.iter().rev() {
            let feedback = m ^ rem[p - 1];
            for j in (1..p).rev() {
                rem[j] = rem[j - 1] ^ gf::mul(feedback, self.generator[j]);
            }
            rem[0] = gf::mul(feedback, self.generator[0]);
        }
        let mut cw = rem;
        cw.extend_from_slice(message);
        Ok(cw)
    }

    pub fn syndromes(&self, received: &[u8]) -> Vec<u8> {
        (0..self.parity()).map(|i| gf::eval(received, gf::alpha_pow(i as i64))).collect()
    }

    /// Error locator `Λ(x)` (lowest degree first) by Berlekamp–Massey.
    pub fn error_locator(syndromes: &[u8]) -> Vec<u8> {
        let mut c = vec![1u8];
        let mut b = vec![1u8];
        let (mut l, mut m, mut bd) = (0usize, 1usize, 1u8);
        for r in 0..syndromes.len() {
            let mut d = syndromes[r];
            for i in 1..=l.min(c.len() - 1) {
                d ^= gf::mul(c[i], syndromes[r - i]);
            }
            if d == 0 {
                m += 1;
                continue;
            }
            let coef = gf::div(d, bd);
            let mut next = c.clone();
            if next.len() < b.len() + m {
                next.resize(b.len() + m, 0);
            }
            for (i, &bi) in b.iter().enumerate() {
                next[i + m] ^= gf::mul(coef, bi);
            }
            if 2 * l <= r {
                b = std::mem::replace(&mut c, next);
                l = r + 1 - l;
                bd = d;
                m = 1;
            } else {
                c = next;
                m += 1;
            }
        }
        while c.len() > 1 && c[c.len() - 1] == 0 {
            c.pop();
        }
        c
    }

    pub fn decode_block(&self, received: &[u8]) -> Result<BlockDecode, ClassicError> {
        if received.len() != self.n {
            return Err(ClassicError::Argument(format!("block has {} symbols, expected {}", received.len(), self.n)));
        }
        let fail = || BlockDecode { message: received[self.parity()..].to_vec(), corrected: Vec::new(), failed: true };
        let synd = self.syndromes(received);
        if synd.iter().all(|&s| s == 0) {
            return Ok(BlockDecode { message: received[self.parity()..].to_vec(), corrected: Vec::new(), failed: false });
        }
        let lambda = Self::error_locator(&synd);
        let errors = lambda.len() - 1;
        if errors > self.t() {
            return Ok(fail());
        }
        // Chien search over the positions that exist in the shortened code
        let positions: Vec<usize> =
            (0..self.n).filter(|&j| gf::eval(&lambda, gf::alpha_pow(-(j as i64))) == 0).collect();
        if positions.len() != errors {
            return Ok(fail());
        }
        // Ω(x) = S(x)Λ(x) mod x^(n−k)
        let p = self.parity();
        let mut omega = vec![0u8; p];
        for (i, &s) in synd.iter().enumerate() {
            for (j, &l) in lambda.iter().enumerate() {
                if i + j < p {
                    omega[i + j] ^= gf::mul(s, l);
                }
            }
        }
        // formal derivative keeps odd-degree terms
        let dlambda: Vec<u8> = (1..lambda.len()).map(|i| if i % 2 == 1 { lambda[i] } else { 0 }).collect();
        let mut fixed = received.to_vec();
        for &j in &positions {
            let x = gf::alpha_pow(j as i64);
            let x_inv = gf::alpha_pow(-(j as i64));
            let denom = gf::eval(&dlambda, x_inv);
            if denom == 0 {
                return Ok(fail());
            }
            fixed[j] ^= gf::mul(x, gf::div(gf::eval(&omega, x_inv), denom));
        }
        if self.syndromes(&fixed).iter().any(|&s| s != 0) {
            return Ok(fail());
        }
        Ok(BlockDecode { message: fixed[p..].to_vec(), corrected: positions, failed: false })
    }

    /// Zero-pads to whole blocks and encodes them back to back.
    pub fn encode(&self, payload: &[u8]) -> Vec<u8> {
        let blocks = payload.len().div_ceil(self.k).max(1);
        let mut padded = payload.to_vec();
        padded.resize(blocks * self.k, 0);
        padded.chunks(self.k).flat_map(|m| self.encode_block(m).expect("whole block")).collect()
    }

    /// Decodes back-to-back blocks; returns the payload and the number of
    /// blocks flagged as failed. A trailing partial block is dropped.
    pub fn decode(&self, coded: &[u8]) -> (Vec<u8>, usize) {
        let mut out = Vec::with_capacity(coded.len() / self.n * self.k);
        let mut failures = 0;
        for block in coded.chunks_exact(self.n) {
            let d = self.decode_block(block).expect("whole block");
            failures += usize::from(d.failed);
            out.extend_from_slice(&d.message);
        }
        (out, failures)
    }
}

/// MSB-first packing, zero-padded to whole bytes.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i))))
        .collect()
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1)).collect()
}
