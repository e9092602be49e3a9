//! Layer library: parameter initialization and forward construction on a
//! [`Graph`].
//!
//! Parameters are named `<layer>.<role>` (for example `dec.dense1.w`). Every
//! dense output is a named activation point so calibration and activation
//! quantization can address it.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::graph::{Graph, Var};
use super::tensor::{ParamKind, ParamSet, Partition, Tensor};
use super::NnError;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Embedding { vocab: usize, dim: usize },
    Dense { inp: usize, out: usize },
    Relu,
    Sigmoid,
    Softmax,
    LayerNorm { dim: usize },
    MultiHeadAttention { dim: usize, heads: usize },
    TransformerBlock { dim: usize, heads: usize, ff: usize },
    Prediction { inp: usize, vocab: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self { name: name.into(), kind }
    }

    /// Output width given the input width. `None` input width means token ids.
    fn output_width(&self, input: Option<usize>) -> Result<Option<usize>, NnError> {
        let mismatch = |expected: usize| NnError::Dimension {
            layer: self.name.clone(),
            detail: format!("expects width {expected}, got {input:?}"),
        };
        use LayerKind::*;
        Ok(match &self.kind {
            Embedding { dim, .. } => {
                if input.is_some() && input != Some(1) {
                    return Err(NnError::Dimension {
                        layer: self.name.clone(),
                        detail: format!("expects token ids, got width {input:?}"),
                    });
                }
                Some(*dim)
            }
            Dense { inp, out } | Prediction { inp, vocab: out } => {
                if input != Some(*inp) {
                    return Err(mismatch(*inp));
                }
                Some(*out)
            }
            Relu | Sigmoid | Softmax => {
                if input.is_none() {
                    return Err(NnError::Dimension { layer: self.name.clone(), detail: "needs real input".into() });
                }
                input
            }
            LayerNorm { dim } | MultiHeadAttention { dim, .. } | TransformerBlock { dim, .. } => {
                if input != Some(*dim) {
                    return Err(mismatch(*dim));
                }
                if let MultiHeadAttention { heads, .. } | TransformerBlock { heads, .. } = &self.kind {
                    if *heads == 0 || dim % heads != 0 {
                        return Err(NnError::Dimension {
                            layer: self.name.clone(),
                            detail: format!("{dim} not divisible into {heads} heads"),
                        });
                    }
                }
                Some(*dim)
            }
        })
    }
}

/// Checks that the widths of consecutive layers compose. `input_width` of
/// `None` means the first layer receives token ids.
pub fn validate(specs: &[LayerSpec], input_width: Option<usize>) -> Result<Option<usize>, NnError> {
    specs.iter().try_fold(input_width, |w, s| s.output_width(w))
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect()
}

pub fn init_dense(params: &mut ParamSet, name: &str, inp: usize, out: usize, part: Partition, rng: &mut impl Rng) {
    let w = Tensor::new(vec![inp, out], glorot(rng, inp, out)).expect("shape");
    params.insert(format!("{name}.w"), w, part, ParamKind::Weight);
    params.insert(format!("{name}.b"), Tensor::zeros(vec![out]), part, ParamKind::Bias);
}

/// Dense layer whose last weight matrix starts at zero (used for residual
/// branches that should begin as the identity map).
pub fn init_dense_zero(params: &mut ParamSet, name: &str, inp: usize, out: usize, part: Partition) {
    params.insert(format!("{name}.w"), Tensor::zeros(vec![inp, out]), part, ParamKind::Weight);
    params.insert(format!("{name}.b"), Tensor::zeros(vec![out]), part, ParamKind::Bias);
}

pub fn init_layer_norm(params: &mut ParamSet, name: &str, dim: usize, part: Partition) {
    params.insert(format!("{name}.gamma"), Tensor::new(vec![dim], vec![1.0; dim]).expect("shape"), part, ParamKind::Norm);
    params.insert(format!("{name}.beta"), Tensor::zeros(vec![dim]), part, ParamKind::Norm);
}

pub fn init_embedding(params: &mut ParamSet, name: &str, vocab: usize, dim: usize, part: Partition, rng: &mut impl Rng) {
    let t = Tensor::new(vec![vocab, dim], glorot(rng, vocab, dim)).expect("shape");
    params.insert(format!("{name}.table"), t, part, ParamKind::Weight);
}

pub fn init_attention(params: &mut ParamSet, name: &str, dim: usize, part: Partition, rng: &mut impl Rng) {
    for role in ["q", "k", "v", "o"] {
        init_dense(params, &format!("{name}.{role}"), dim, dim, part, rng);
    }
}

pub fn init_transformer_block(params: &mut ParamSet, name: &str, dim: usize, ff: usize, part: Partition, rng: &mut impl Rng) {
    init_attention(params, &format!("{name}.attn"), dim, part, rng);
    init_layer_norm(params, &format!("{name}.ln1"), dim, part);
    init_dense(params, &format!("{name}.ff1"), dim, ff, part, rng);
    init_dense(params, &format!("{name}.ff2"), ff, dim, part, rng);
    init_layer_norm(params, &format!("{name}.ln2"), dim, part);
}

/// Creates the parameters of every layer in `specs` under one partition.
pub fn init_layers(params: &mut ParamSet, specs: &[LayerSpec], part: Partition, rng: &mut impl Rng) {
    for s in specs {
        match &s.kind {
            LayerKind::Embedding { vocab, dim } => init_embedding(params, &s.name, *vocab, *dim, part, rng),
            LayerKind::Dense { inp, out } | LayerKind::Prediction { inp, vocab: out } => {
                init_dense(params, &s.name, *inp, *out, part, rng)
            }
            LayerKind::LayerNorm { dim } => init_layer_norm(params, &s.name, *dim, part),
            LayerKind::MultiHeadAttention { dim, .. } => init_attention(params, &s.name, *dim, part, rng),
            LayerKind::TransformerBlock { dim, ff, .. } => init_transformer_block(params, &s.name, *dim, *ff, part, rng),
            LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Softmax => {}
        }
    }
}

pub fn dense(g: &mut Graph, params: &ParamSet, name: &str, x: Var) -> Result<Var, NnError> {
    let w = g.param(params, &format!("{name}.w"))?;
    let b = g.param(params, &format!("{name}.b"))?;
    let (inp, cols) = (g.value(w).rows(), g.value(x).cols());
    if inp != cols {
        return Err(NnError::Dimension { layer: name.to_string(), detail: format!("expects width {inp}, got {cols}") });
    }
    let y = g.matmul(x, w)?;
    let y = g.add_bias(y, b)?;
    Ok(g.activation(name, y))
}

pub fn layer_norm(g: &mut Graph, params: &ParamSet, name: &str, x: Var) -> Result<Var, NnError> {
    let gamma = g.param(params, &format!("{name}.gamma"))?;
    let beta = g.param(params, &format!("{name}.beta"))?;
    g.layer_norm(x, gamma, beta).map_err(|e| NnError::Dimension { layer: name.to_string(), detail: e.to_string() })
}

pub fn embedding(g: &mut Graph, params: &ParamSet, name: &str, ids: &[usize]) -> Result<Var, NnError> {
    let table = g.param(params, &format!("{name}.table"))?;
    g.gather(table, ids).map_err(|e| NnError::Dimension { layer: name.to_string(), detail: e.to_string() })
}

/// Scaled dot-product self-attention over the rows of `x`.
pub fn multi_head_attention(g: &mut Graph, params: &ParamSet, name: &str, x: Var, heads: usize) -> Result<Var, NnError> {
    let dim = g.value(x).cols();
    if heads == 0 || dim % heads != 0 {
        return Err(NnError::Dimension { layer: name.to_string(), detail: format!("{dim} not divisible into {heads} heads") });
    }
    let dh = dim / heads;
    let q = dense(g, params, &format!("{name}.q"), x)?;
    let k = dense(g, params, &format!("{name}.k"), x)?;
    let v = dense(g, params, &format!("{name}.v"), x)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax(scores);
        outs.push(g.matmul(attn, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    dense(g, params, &format!("{name}.o"), joined)
}

/// Post-norm transformer block: `x = LN(x + MHA(x)); x = LN(x + FF(x))`.
pub fn transformer_block(g: &mut Graph, params: &ParamSet, name: &str, x: Var, heads: usize) -> Result<Var, NnError> {
    let a = multi_head_attention(g, params, &format!("{name}.attn"), x, heads)?;
    let x = g.add(x, a)?;
    let x = layer_norm(g, params, &format!("{name}.ln1"), x)?;
    let h = dense(g, params, &format!("{name}.ff1"), x)?;
    let h = g.relu(h);
    let h = dense(g, params, &format!("{name}.ff2"), h)?;
    let x = g.add(x, h)?;
    layer_norm(g, params, &format!("{name}.ln2"), x)
}

/// Runs a layer stack. For a leading embedding layer the input holds token
/// ids, one per row.
pub fn forward(g: &mut Graph, params: &ParamSet, specs: &[LayerSpec], input: Var) -> Result<Var, NnError> {
    let first_width = match specs.first().map(|s| &s.kind) {
        Some(LayerKind::Embedding { .. }) => None,
        _ => Some(g.value(input).cols()),
    };
    validate(specs, first_width)?;
    let mut x = input;
    for s in specs {
        x = match &s.kind {
            LayerKind::Embedding { .. } => {
                let ids: Vec<usize> = g.value(x).data().iter().map(|&v| v as usize).collect();
                embedding(g, params, &s.name, &ids)?
            }
            LayerKind::Dense { .. } => dense(g, params, &s.name, x)?,
            LayerKind::Relu => g.relu(x),
            LayerKind::Sigmoid => g.sigmoid(x),
            LayerKind::Softmax => g.softmax(x),
            LayerKind::LayerNorm { .. } => layer_norm(g, params, &s.name, x)?,
            LayerKind::MultiHeadAttention { heads, .. } => multi_head_attention(g, params, &s.name, x, *heads)?,
            LayerKind::TransformerBlock { heads, .. } => transformer_block(g, params, &s.name, x, *heads)?,
            LayerKind::Prediction { .. } => {
                let logits = dense(g, params, &s.name, x)?;
                g.softmax(logits)
            }
        };
    }
    Ok(x)
}

/// Fixed sinusoidal position table `[len × dim]`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![len, dim], data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity_passes_input() {
        let mut params = ParamSet::new();
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        params.insert("d.w", eye, Partition::Aux, ParamKind::Weight);
        params.insert("d.b", Tensor::zeros(vec![3]), Partition::Aux, ParamKind::Bias);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![0.5, -2.0, 7.0]).unwrap());
        let specs = [LayerSpec::new("d", LayerKind::Dense { inp: 3, out: 3 })];
        let y = forward(&mut g, &params, &specs, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn mismatch_names_offending_layer() {
        let specs = [
            LayerSpec::new("first", LayerKind::Dense { inp: 4, out: 8 }),
            LayerSpec::new("second", LayerKind::Dense { inp: 7, out: 2 }),
        ];
        match validate(&specs, Some(4)) {
            Err(NnError::Dimension { layer, .. }) => assert_eq!(layer, "second"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = [LayerSpec::new("d", LayerKind::Dense { inp: 4, out: 2 })];
        let mut params = ParamSet::new();
        init_layers(&mut params, &specs, Partition::Aux, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 3]));
        assert!(matches!(forward(&mut g, &params, &specs, x), Err(NnError::Dimension { .. })));
    }

    #[test]
    fn heads_must_divide_width() {
        let specs = [LayerSpec::new("att", LayerKind::MultiHeadAttention { dim: 10, heads: 4 })];
        assert!(validate(&specs, Some(10)).is_err());
    }

    #[test]
    fn glorot_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        init_dense(&mut params, "d", 10, 6, Partition::Aux, &mut rng);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(params.tensor("d.w").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(params.tensor("d.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut params = ParamSet::new();
        init_layer_norm(&mut params, "ln", 5, Partition::Aux);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 5], vec![1., 2., 3., 4., 10., -3., 0.5, 0.2, 8., 1.]).unwrap());
        let y = layer_norm(&mut g, &params, "ln", x).unwrap();
        for row in g.value(y).data().chunks(5) {
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
