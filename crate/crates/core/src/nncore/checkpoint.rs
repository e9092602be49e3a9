//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "LDSCCKPT" | version u32 | meta_len u32 | meta (UTF-8 "key=value\n"*)
//! count u32 | record*
//! record: name_len u32 | name | partition u8 | kind u8 | ndim u32 | dims u32*
//!         flags u8 (bit0 = mask present) | [mask bitmap, ceil(n/8) bytes]
//!         dtype u8 | payload
//! dtype 1 (f32): n × f32        dtype 2 (f64): n × f64
//! dtype 3 (qint-m): m u8 | degenerate u8 | min f32 | scale f32 |
//!         codes of surviving entries packed at m bits, LSB first
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::quant::MAX_BITS;
use super::tensor::{ParamEntry, ParamKind, ParamSet, Partition, Tensor};
use super::NnError;

pub const MAGIC: &[u8; 8] = b"LDSCCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }
}

const QINT: u8 = 3;

/// Integer codes of one weight tensor. `codes` covers only surviving
/// (unmasked) entries, in storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub m_bits: u32,
    pub min: f32,
    pub scale: f32,
    /// Constant layer: every code is 0 and decodes to `min`.
    pub degenerate: bool,
    pub codes: Vec<u32>,
}

impl QuantizedTensor {
    pub fn dequantize_code(&self, code: u32) -> f64 {
        if self.degenerate {
            self.min as f64
        } else {
            code as f64 / self.scale as f64 + self.min as f64
        }
    }

    /// Number of payload bytes the packed codes occupy.
    pub fn packed_bytes(&self) -> usize {
        (self.codes.len() * self.m_bits as usize).div_ceil(8)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet,
    /// Tensors stored as integer codes; their dequantized values are also in
    /// `params`.
    pub quantized: BTreeMap<String, QuantizedTensor>,
}

impl Checkpoint {
    pub fn new(params: ParamSet) -> Self {
        Self { params, ..Self::default() }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, NnError> {
        self.meta
            .get(key)
            .ok_or_else(|| NnError::Checkpoint(format!("missing metadata `{key}`")))?
            .parse()
            .map_err(|_| NnError::Checkpoint(format!("malformed metadata `{key}`")))
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<(), NnError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u8(w: &mut impl Write, v: u8) -> Result<(), NnError> {
    w.write_all(&[v])?;
    Ok(())
}

fn pack_bits(codes: &[u32], m: u32) -> Vec<u8> {
    let mut out = vec![0u8; (codes.len() * m as usize).div_ceil(8)];
    let mut bit = 0usize;
    for &c in codes {
        for b in 0..m {
            if (c >> b) & 1 == 1 {
                out[bit / 8] |= 1 << (bit % 8);
            }
            bit += 1;
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], m: u32, count: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(count);
    let mut bit = 0usize;
    for _ in 0..count {
        let mut c = 0u32;
        for b in 0..m {
            if (bytes[bit / 8] >> (bit % 8)) & 1 == 1 {
                c |= 1 << b;
            }
            bit += 1;
        }
        out.push(c);
    }
    out
}

pub fn write(w: &mut impl Write, ckpt: &Checkpoint, dtype: DType) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    let meta: String = ckpt.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    put_u32(w, meta.len() as u32)?;
    w.write_all(meta.as_bytes())?;
    put_u32(w, ckpt.params.len() as u32)?;
    for (name, entry) in ckpt.params.iter() {
        put_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        put_u8(w, entry.partition.tag())?;
        put_u8(w, entry.kind.code())?;
        let shape = entry.tensor.shape();
        put_u32(w, shape.len() as u32)?;
        for &d in shape {
            put_u32(w, d as u32)?;
        }
        match &entry.mask {
            Some(mask) => {
                put_u8(w, 1)?;
                let bits: Vec<u32> = mask.iter().map(|&k| k as u32).collect();
                w.write_all(&pack_bits(&bits, 1))?;
            }
            None => put_u8(w, 0)?,
        }
        if let Some(q) = ckpt.quantized.get(name) {
            if q.codes.len() != entry.surviving() {
                return Err(NnError::Checkpoint(format!("`{name}`: code count does not match surviving entries")));
            }
            put_u8(w, QINT)?;
            put_u8(w, q.m_bits as u8)?;
            put_u8(w, q.degenerate as u8)?;
            w.write_all(&q.min.to_le_bytes())?;
            w.write_all(&q.scale.to_le_bytes())?;
            w.write_all(&pack_bits(&q.codes, q.m_bits))?;
            continue;
        }
        put_u8(w, dtype.code())?;
        for &v in entry.tensor.data() {
            match dtype {
                DType::F32 => w.write_all(&(v as f32).to_le_bytes())?,
                DType::F64 => w.write_all(&v.to_le_bytes())?,
            }
        }
    }
    Ok(())
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, NnError> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| NnError::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }
    fn f32(&mut self) -> Result<f32, NnError> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read(r: &mut impl Read) -> Result<Checkpoint, NnError> {
    let mut rd = Reader { inner: r };
    if rd.bytes(8)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = rd.u32()? as usize;
    let meta_text = String::from_utf8(rd.bytes(meta_len)?)
        .map_err(|_| NnError::Checkpoint("metadata is not UTF-8".into()))?;
    let mut meta = BTreeMap::new();
    for line in meta_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    let count = rd.u32()?;
    let mut params = ParamSet::new();
    let mut quantized = BTreeMap::new();
    for _ in 0..count {
        let name_len = rd.u32()? as usize;
        let name = String::from_utf8(rd.bytes(name_len)?)
            .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?;
        let partition = Partition::from_tag(rd.u8()?)
            .ok_or_else(|| NnError::Checkpoint(format!("`{name}`: unknown partition tag")))?;
        let kind = ParamKind::from_code(rd.u8()?)
            .ok_or_else(|| NnError::Checkpoint(format!("`{name}`: unknown parameter kind")))?;
        let ndim = rd.u32()? as usize;
        let shape = (0..ndim).map(|_| rd.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mask = match rd.u8()? {
            0 => None,
            1 => {
                let bits = unpack_bits(&rd.bytes(n.div_ceil(8))?, 1, n);
                Some(bits.into_iter().map(|b| b == 1).collect::<Vec<_>>())
            }
            f => return Err(NnError::Checkpoint(format!("`{name}`: unknown flags {f}"))),
        };
        let data = match rd.u8()? {
            1 => (0..n).map(|_| rd.f32().map(f64::from)).collect::<Result<Vec<_>, _>>()?,
            2 => (0..n).map(|_| rd.f64()).collect::<Result<Vec<_>, _>>()?,
            QINT => {
                let m_bits = rd.u8()? as u32;
                if m_bits == 0 || m_bits > MAX_BITS {
                    return Err(NnError::Checkpoint(format!("`{name}`: bit-width {m_bits}")));
                }
                let degenerate = rd.u8()? == 1;
                let min = rd.f32()?;
                let scale = rd.f32()?;
                let surviving = mask.as_ref().map_or(n, |m| m.iter().filter(|&&k| k).count());
                let bytes = rd.bytes((surviving * m_bits as usize).div_ceil(8))?;
                let q = QuantizedTensor { m_bits, min, scale, degenerate, codes: unpack_bits(&bytes, m_bits, surviving) };
                let mut codes = q.codes.iter();
                let data = (0..n)
                    .map(|i| match &mask {
                        Some(m) if !m[i] => 0.0,
                        _ => q.dequantize_code(*codes.next().expect("counted")),
                    })
                    .collect();
                quantized.insert(name.clone(), q);
                data
            }
            d => return Err(NnError::Checkpoint(format!("`{name}`: unknown dtype {d}"))),
        };
        let tensor = Tensor::new(shape, data)?;
        params.insert_entry(name, ParamEntry { tensor, partition, kind, mask });
    }
    Ok(Checkpoint { meta, params, quantized })
}

pub fn save(path: impl AsRef<Path>, ckpt: &Checkpoint, dtype: DType) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w, ckpt, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
    read(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("enc.w", Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 1e-7, -0.0, 42.0]).unwrap(), Partition::SemanticEncoder, ParamKind::Weight);
        p.insert("enc.b", Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(), Partition::ChannelEncoder, ParamKind::Bias);
        p.insert("ln.gamma", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(), Partition::ChannelDecoder, ParamKind::Norm);
        p
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let ckpt = Checkpoint::new(sample()).with_meta("vocab", 10);
        let mut buf = Vec::new();
        write(&mut buf, &ckpt, DType::F64).unwrap();
        let back = read(&mut buf.as_slice()).unwrap();
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.meta_parse::<usize>("vocab").unwrap(), 10);
    }

    #[test]
    fn masks_and_partitions_survive() {
        let mut p = sample();
        p.get_mut("enc.w").unwrap().mask = Some(vec![true, false, true, true, false, true]);
        let ckpt = Checkpoint::new(p);
        let mut buf = Vec::new();
        write(&mut buf, &ckpt, DType::F32).unwrap();
        let back = read(&mut buf.as_slice()).unwrap();
        let e = back.params.get("enc.w").unwrap();
        assert_eq!(e.mask, ckpt.params.get("enc.w").unwrap().mask);
        assert_eq!(e.partition, Partition::SemanticEncoder);
        assert_eq!(back.params.get("enc.b").unwrap().partition, Partition::ChannelEncoder);
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOTACKPT\x01\0\0\0".to_vec();
        assert!(matches!(read(&mut buf.as_slice()), Err(NnError::Checkpoint(_))));
    }

    #[test]
    fn truncated_input_rejected() {
        let mut buf = Vec::new();
        write(&mut buf, &Checkpoint::new(sample()), DType::F64).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn bit_packing_round_trip() {
        let codes = vec![0, 5, 15, 7, 1, 9, 3];
        assert_eq!(unpack_bits(&pack_bits(&codes, 4), 4, codes.len()), codes);
        let wide = vec![u32::MAX, 0, 123_456_789];
        assert_eq!(unpack_bits(&pack_bits(&wide, 32), 32, 3), wide);
    }
}
