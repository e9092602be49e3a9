//! Reverse-mode autodiff tape.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! tape in reverse and routes parameter gradients back into the [`ParamSet`]
//! the parameters were read from. All tensors are treated as 2-D
//! `[rows, cols]`; a vector is a single row.

use std::collections::{BTreeMap, HashMap};

use super::quant::{min_max, UniformQuantizer};
use super::tensor::{ParamKind, ParamSet, Precision, Tensor};
use super::NnError;

/// Probability floor inside the logarithms of the two-term cross-entropy.
pub const PROB_EPS: f64 = 1e-12;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    PowerNorm { x: Var, rms: f64 },
    StraightThrough(Var),
    CeLoss { probs: Var, targets: Vec<usize>, scale: f64 },
    Sum(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// What happens at named activation points (`Graph::activation`).
#[derive(Clone, Debug, Default)]
pub enum ActivationMode {
    #[default]
    PassThrough,
    /// Record the per-point min/max seen during this forward pass.
    Observe,
    /// Fake-quantize with the given per-point quantizers (STE backward).
    Quantize(BTreeMap<String, UniformQuantizer>),
}

/// Gradients of every node with respect to one scalar.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
    params: Vec<(Var, String)>,
    param_cache: HashMap<String, Var>,
    weight_bits: Option<u32>,
    activation_mode: ActivationMode,
    observed: BTreeMap<String, (f64, f64)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self { precision, ..Self::default() }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Fake-quantize every `Weight` parameter to `bits` when it is read.
    pub fn set_weight_bits(&mut self, bits: Option<u32>) {
        self.weight_bits = bits;
    }

    pub fn set_activation_mode(&mut self, mode: ActivationMode) {
        self.activation_mode = mode;
    }

    /// Ranges recorded under [`ActivationMode::Observe`].
    pub fn observed_ranges(&self) -> &BTreeMap<String, (f64, f64)> {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, mut value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            let p = self.precision;
            value.data_mut().iter_mut().for_each(|x| *x = p.round(*x));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn shaped(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![rows, cols], data).expect("op produced consistent shape")
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input (gradient available through [`Graph::gradients`]).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Reads a parameter. Repeated reads of one name share a node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var, NnError> {
        if let Some(&v) = self.param_cache.get(name) {
            return Ok(v);
        }
        let entry = params.get(name).ok_or_else(|| NnError::MissingParam(name.to_string()))?;
        let mut value = entry.tensor.clone();
        value.zero_grad();
        if let (Some(bits), ParamKind::Weight) = (self.weight_bits, entry.kind) {
            fake_quantize_weights(value.data_mut(), entry.mask.as_deref(), bits);
        }
        let v = self.push(value, Op::Param, true);
        self.params.push((v, name.to_string()));
        self.param_cache.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(NnError::Shape(format!("matmul [{m}x{k}]·[{k2}x{n}]")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Self::shaped(m, n, out), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(NnError::Shape(format!("matmul_bt [{m}x{k}]·[{n}x{k2}]ᵀ")));
        }
        let out = matmul_bt(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Self::shaped(m, n, out), Op::MatMulBt(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize), NnError> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db || self.value(a).len() != self.value(b).len() {
            return Err(NnError::Shape(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, NnError> {
        let (r, c) = self.same_shape(a, b, "elementwise")?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Self::shaped(r, c, out), op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let (r, c) = self.dims(x);
        if self.value(bias).len() != c {
            return Err(NnError::Shape(format!("bias of {} for {c} columns", self.value(bias).len())));
        }
        let b = self.value(bias).data();
        let out = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(Self::shaped(r, c, out), Op::AddBias(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).data().iter().map(|v| v * s).collect();
        let ng = self.needs(x);
        self.push(Self::shaped(r, c, out), Op::Scale(x, s), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let ng = self.needs(x);
        self.push(Self::shaped(r, c, out), Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let ng = self.needs(x);
        self.push(Self::shaped(r, c, out), Op::Sigmoid(x), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(x).data().chunks(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            let mut z = 0.0;
            for &v in row {
                let e = (v - m).exp();
                z += e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|e| *e /= z);
        }
        let ng = self.needs(x);
        self.push(Self::shaped(r, c, out), Op::Softmax(x), ng)
    }

    /// Row-wise layer normalization with per-column gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NnError> {
        let (r, c) = self.dims(x);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(NnError::Shape(format!("layer_norm gain/shift must have {c} entries")));
        }
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        {
            let g = self.value(gamma).data();
            let b = self.value(beta).data();
            for row in self.value(x).data().chunks(c) {
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + LN_EPS).sqrt();
                inv_std.push(is);
                for (j, &v) in row.iter().enumerate() {
                    let h = (v - mean) * is;
                    xhat.push(h);
                    out.push(g[j] * h + b[j]);
                }
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Self::shaped(r, c, out), Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let (v, d) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NnError::Shape(format!("index {bad} outside table of {v} rows")));
        }
        let t = self.value(table);
        let out = ids.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let ng = self.needs(table);
        Ok(self.push(Self::shaped(ids.len(), d, out), Op::Gather { table, ids: ids.to_vec() }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(NnError::Shape(format!("columns {start}..{} of {c}", start + len)));
        }
        let out = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let ng = self.needs(x);
        Ok(self.push(Self::shaped(r, len, out), Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let r = self.dims(parts[0]).0;
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return Err(NnError::Shape("concat_cols row mismatch".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Self::shaped(r, total, out), Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Scales `x` so the mean of its squared entries is 1.
    pub fn power_normalize(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let rms = self.value(x).power().sqrt().max(1e-12);
        let out = self.value(x).data().iter().map(|v| v / rms).collect();
        let ng = self.needs(x);
        self.push(Self::shaped(r, c, out), Op::PowerNorm { x, rms }, ng)
    }

    /// Applies `f` in the forward pass and the identity in the backward pass.
    pub fn straight_through(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).data().iter().map(|&v| f(v)).collect();
        let ng = self.needs(x);
        self.push(Self::shaped(r, c, out), Op::StraightThrough(x), ng)
    }

    /// Rounding with a straight-through gradient.
    pub fn ste_round(&mut self, x: Var) -> Var {
        self.straight_through(x, f64::round_ties_even)
    }

    /// A named activation point: observed or fake-quantized depending on the
    /// graph's [`ActivationMode`].
    pub fn activation(&mut self, name: &str, x: Var) -> Var {
        match &self.activation_mode {
            ActivationMode::PassThrough => x,
            ActivationMode::Observe => {
                let (lo, hi) = min_max(self.value(x).data());
                let e = self.observed.entry(name.to_string()).or_insert((lo, hi));
                e.0 = e.0.min(lo);
                e.1 = e.1.max(hi);
                x
            }
            ActivationMode::Quantize(map) => match map.get(name).copied() {
                Some(q) => self.straight_through(x, |v| q.fake(v)),
                None => x,
            },
        }
    }

    /// Two-term cross-entropy of row-wise probabilities against target
    /// indices: per row `-ln p_t - Σ_{j≠t} ln(1 - p_j)`, averaged over rows.
    pub fn ce_loss(&mut self, probs: Var, targets: &[usize]) -> Result<Var, NnError> {
        let rows = self.dims(probs).0;
        self.ce_loss_scaled(probs, targets, 1.0 / rows.max(1) as f64)
    }

    /// Two-term cross-entropy summed over rows and multiplied by `scale`.
    pub fn ce_loss_scaled(&mut self, probs: Var, targets: &[usize], scale: f64) -> Result<Var, NnError> {
        let (r, c) = self.dims(probs);
        if targets.len() != r {
            return Err(NnError::Shape(format!("{} targets for {r} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NnError::Argument(format!("target {bad} outside vocabulary of {c}")));
        }
        let p = self.value(probs).data();
        let mut total = 0.0;
        for (row, &t) in p.chunks(c).zip(targets) {
            for (j, &pj) in row.iter().enumerate() {
                total -= if j == t { pj.max(PROB_EPS).ln() } else { (1.0 - pj).max(PROB_EPS).ln() };
            }
        }
        let ng = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(total * scale),
            Op::CeLoss { probs, targets: targets.to_vec(), scale },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumSquares(x), ng)
    }

    /// Sums several scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, NnError> {
        let mut iter = terms.iter();
        let mut acc = *iter.next().ok_or_else(|| NnError::Argument("empty sum".into()))?;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Gradients of scalar `loss` with respect to every node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NnError::State("backward called before any forward computation".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::State(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Back-propagates `loss` and accumulates gradients into `params`.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<(), NnError> {
        let grads = self.gradients(loss)?;
        for (v, name) in &self.params {
            if let Some(g) = grads.get(*v) {
                let entry = params.get_mut(name).ok_or_else(|| NnError::MissingParam(name.clone()))?;
                entry.tensor.accumulate_grad(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let (r, c) = (node.value.rows(), node.value.cols());
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.needs(*a) {
                    let da = matmul_bt(g, self.value(*b).data(), m, n, k);
                    acc(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db = matmul_at(self.value(*a).data(), g, m, k, n);
                    acc(grads, *b, &db);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                if self.needs(*a) {
                    let da = matmul(g, self.value(*b).data(), m, n, k);
                    acc(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db = matmul_at(g, self.value(*a).data(), m, n, k);
                    acc(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                acc_if(self, grads, *a, g);
                acc_if(self, grads, *b, g);
            }
            Op::Sub(a, b) => {
                acc_if(self, grads, *a, g);
                if self.needs(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    acc(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    acc(grads, *a, &d);
                }
                if self.needs(*b) {
                    let d: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    acc(grads, *b, &d);
                }
            }
            Op::AddBias(x, b) => {
                acc_if(self, grads, *x, g);
                if self.needs(*b) {
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    acc(grads, *b, &db);
                }
            }
            Op::Scale(x, s) => {
                let d: Vec<f64> = g.iter().map(|v| v * s).collect();
                acc(grads, *x, &d);
            }
            Op::Relu(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(grads, *x, &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, &y)| gv * y * (1.0 - y))
                    .collect();
                acc(grads, *x, &d);
            }
            Op::Softmax(x) => {
                let mut d = Vec::with_capacity(r * c);
                for (grow, yrow) in g.chunks(c).zip(node.value.data().chunks(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    d.extend(grow.iter().zip(yrow).map(|(gv, y)| y * (gv - dot)));
                }
                acc(grads, *x, &d);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gam = self.value(*gamma).data();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += grow[j] * hrow[j];
                            db[j] += grow[j];
                        }
                    }
                    acc_if(self, grads, *gamma, &dg);
                    acc_if(self, grads, *beta, &db);
                }
                if self.needs(*x) {
                    let mut dx = Vec::with_capacity(r * c);
                    let n = c as f64;
                    for ((grow, hrow), is) in g.chunks(c).zip(xhat.chunks(c)).zip(inv_std) {
                        let dh: Vec<f64> = grow.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        dx.extend(dh.iter().zip(hrow).map(|(d, h)| is / n * (n * d - s1 - h * s2)));
                    }
                    acc(grads, *x, &dx);
                }
            }
            Op::Gather { table, ids } => {
                let (v, d) = self.dims(*table);
                let mut dt = vec![0.0; v * d];
                for (grow, &i) in g.chunks(d).zip(ids) {
                    dt[i * d..(i + 1) * d].iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                }
                acc(grads, *table, &dt);
            }
            Op::SliceCols { x, start } => {
                let full = self.dims(*x).1;
                let mut dx = vec![0.0; r * full];
                for (i, grow) in g.chunks(c).enumerate() {
                    dx[i * full + start..i * full + start + c].copy_from_slice(grow);
                }
                acc(grads, *x, &dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    if self.needs(p) {
                        let dp: Vec<f64> = g
                            .chunks(c)
                            .flat_map(|row| row[offset..offset + pc].iter().copied())
                            .collect();
                        acc(grads, p, &dp);
                    }
                    offset += pc;
                }
            }
            Op::PowerNorm { x, rms } => {
                let y = node.value.data();
                let n = y.len() as f64;
                let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
                let d: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| (gv - yv * dot) / rms).collect();
                acc(grads, *x, &d);
            }
            Op::StraightThrough(x) => acc(grads, *x, g),
            Op::CeLoss { probs, targets, scale } => {
                let pc = self.dims(*probs).1;
                let p = self.value(*probs).data();
                let s = g[0] * scale;
                let mut d = Vec::with_capacity(p.len());
                for (row, &t) in p.chunks(pc).zip(targets) {
                    for (j, &pj) in row.iter().enumerate() {
                        d.push(if j == t {
                            if pj > PROB_EPS { -s / pj } else { 0.0 }
                        } else if 1.0 - pj > PROB_EPS {
                            s / (1.0 - pj)
                        } else {
                            0.0
                        });
                    }
                }
                acc(grads, *probs, &d);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                acc(grads, *x, &vec![g[0]; n]);
            }
            Op::SumSquares(x) => {
                let d: Vec<f64> = self.value(*x).data().iter().map(|v| 2.0 * v * g[0]).collect();
                acc(grads, *x, &d);
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn acc_if(graph: &Graph, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    if graph.needs(v) {
        acc(grads, v, g);
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `[m×k]·[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(cv, &bv)| *cv += av * bv);
        }
    }
    c
}

/// `[m×k]·[n×k]ᵀ`.
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `[m×k]ᵀ·[m×n]`.
pub fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            c[p * n..(p + 1) * n].iter_mut().zip(brow).for_each(|(cv, &bv)| *cv += av * bv);
        }
    }
    c
}

/// Per-tensor m-bit quantize/dequantize of weights; pruned entries stay 0 and
/// are excluded from the range.
pub fn fake_quantize_weights(data: &mut [f64], mask: Option<&[bool]>, bits: u32) {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let (lo, hi) = data
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)));
    match UniformQuantizer::from_range(bits, lo, hi) {
        Ok(q) => {
            for (i, w) in data.iter_mut().enumerate() {
                *w = if keep(i) { q.fake(*w) } else { 0.0 };
            }
        }
        // constant or empty layer: values are already representable
        Err(_) => {
            for (i, w) in data.iter_mut().enumerate() {
                if !keep(i) {
                    *w = 0.0;
                }
            }
        }
    }
}
