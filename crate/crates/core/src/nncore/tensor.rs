use std::collections::BTreeMap;
use std::fmt;

use super::NnError;

/// Dense row-major real array with an optional gradient accumulator.
///
/// Storage is always `f64`; 32-bit runs round every produced value through
/// `f32` (see [`Precision`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n], grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v], grad: None }
    }

    /// 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NnError::Shape("ragged rows".into()));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient accumulator, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    /// Rows of a 2-D tensor (a 1-D tensor is one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), self.data.len());
        }
        Ok(self)
    }

    /// Mean of squared entries.
    pub fn power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Arithmetic precision of a computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F32 => v as f32 as f64,
            Precision::F64 => v,
        }
    }
}

/// Parameter partition of the transceiver: α channel encoder, β semantic
/// encoder, χ semantic decoder, δ channel decoder. `Aux` holds parameters of
/// helper networks such as the CSI denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    ChannelEncoder,
    SemanticEncoder,
    SemanticDecoder,
    ChannelDecoder,
    Aux,
}

impl Partition {
    pub fn tag(self) -> u8 {
        match self {
            Partition::ChannelEncoder => b'a',
            Partition::SemanticEncoder => b'b',
            Partition::SemanticDecoder => b'c',
            Partition::ChannelDecoder => b'd',
            Partition::Aux => b'x',
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            b'a' => Partition::ChannelEncoder,
            b'b' => Partition::SemanticEncoder,
            b'c' => Partition::SemanticDecoder,
            b'd' => Partition::ChannelDecoder,
            b'x' => Partition::Aux,
            _ => return None,
        })
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Partition::ChannelEncoder => "alpha",
            Partition::SemanticEncoder => "beta",
            Partition::SemanticDecoder => "chi",
            Partition::ChannelDecoder => "delta",
            Partition::Aux => "aux",
        };
        f.write_str(s)
    }
}

/// Role of a parameter tensor. Only `Weight` tensors are connections that
/// count towards pruning and quantization totals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

impl ParamKind {
    pub fn code(self) -> u8 {
        match self {
            ParamKind::Weight => 0,
            ParamKind::Bias => 1,
            ParamKind::Norm => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => ParamKind::Weight,
            1 => ParamKind::Bias,
            2 => ParamKind::Norm,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub tensor: Tensor,
    pub partition: Partition,
    pub kind: ParamKind,
    /// `false` marks a pruned connection that must stay zero.
    pub mask: Option<Vec<bool>>,
}

impl ParamEntry {
    pub fn surviving(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&keep| keep).count(),
            None => self.tensor.len(),
        }
    }
}

/// Named, partition-tagged parameter collection. Iteration order is the
/// lexical order of names, which keeps every pass over it deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, partition: Partition, kind: ParamKind) {
        self.entries.insert(
            name.into(),
            ParamEntry { tensor, partition, kind, mask: None },
        );
    }

    pub fn insert_entry(&mut self, name: impl Into<String>, entry: ParamEntry) {
        self.entries.insert(name.into(), entry);
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, NnError> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.tensor.zero_grad();
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    /// Total number of connection weights (M).
    pub fn weight_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Connection weights that survived pruning.
    pub fn surviving_weight_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(ParamEntry::surviving)
            .sum()
    }

    /// Global L2 norm of gradients over one partition.
    pub fn grad_norm(&self, partition: Partition) -> f64 {
        self.entries
            .values()
            .filter(|e| e.partition == partition)
            .filter_map(|e| e.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Re-zeroes every masked entry.
    pub fn apply_masks(&mut self) {
        for e in self.entries.values_mut() {
            if let Some(mask) = &e.mask {
                for (w, &keep) in e.tensor.data_mut().iter_mut().zip(mask) {
                    if !keep {
                        *w = 0.0;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    fn grad_accumulates_with_same_shape() {
        let mut t = Tensor::zeros(vec![2, 2]);
        t.accumulate_grad(&[1.0, 2.0, 3.0, 4.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t.grad().unwrap().len(), t.len());
    }

    #[test]
    fn partition_tags_round_trip() {
        for p in [
            Partition::ChannelEncoder,
            Partition::SemanticEncoder,
            Partition::SemanticDecoder,
            Partition::ChannelDecoder,
            Partition::Aux,
        ] {
            assert_eq!(Partition::from_tag(p.tag()), Some(p));
        }
    }

    #[test]
    fn f32_precision_rounds() {
        let v = 0.1_f64;
        assert_eq!(Precision::F32.round(v), 0.1_f32 as f64);
        assert_eq!(Precision::F64.round(v), v);
    }
}
