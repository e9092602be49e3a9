//! Central finite-difference check of analytic gradients.
//!
//! The probe loss is `Σ r ⊙ f(x)` for a fixed random `r`, so every output
//! element contributes with its own weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, LayerKind, LayerSpec};
use super::{Graph, NnError, ParamSet, Partition, Tensor};

/// Perturbation used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Worst relative error over all checked tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Tensor with the largest error (`input` or a parameter name).
    pub worst: String,
    /// Number of scalar derivatives compared.
    pub checked: usize,
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 10⁻³)`. The floor turns the check into an
/// absolute one for gradients that are exactly zero (attention key biases,
/// whose effect the softmax cancels), where the numerical side is pure
/// rounding noise of order 10⁻¹⁰.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    diff / scale.max(1e-3)
}

/// One small stack per differentiable layer kind.
pub fn layer_kind_cases() -> Vec<(&'static str, Vec<LayerSpec>)> {
    let one = |name: &'static str, kind| (name, vec![LayerSpec::new("l", kind)]);
    vec![
        one("embedding", LayerKind::Embedding { vocab: 7, dim: 5 }),
        one("dense", LayerKind::Dense { inp: 5, out: 4 }),
        one("relu", LayerKind::Relu),
        one("sigmoid", LayerKind::Sigmoid),
        one("softmax", LayerKind::Softmax),
        one("layer_norm", LayerKind::LayerNorm { dim: 6 }),
        one("attention", LayerKind::MultiHeadAttention { dim: 6, heads: 2 }),
        one("transformer_block", LayerKind::TransformerBlock { dim: 6, heads: 2, ff: 8 }),
        one("prediction", LayerKind::Prediction { inp: 5, vocab: 7 }),
    ]
}

fn input_width(kind: &LayerKind) -> usize {
    match *kind {
        LayerKind::Dense { inp, .. } | LayerKind::Prediction { inp, .. } => inp,
        LayerKind::LayerNorm { dim } | LayerKind::MultiHeadAttention { dim, .. } | LayerKind::TransformerBlock { dim, .. } => dim,
        LayerKind::Embedding { .. } | LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Softmax => 6,
    }
}

struct Probe<'a> {
    specs: &'a [LayerSpec],
    weights: Tensor,
}

impl Probe<'_> {
    fn loss(&self, params: &ParamSet, x: &Tensor, differentiable_input: bool) -> Result<(Graph, super::Var, super::Var), NnError> {
        let mut g = Graph::new();
        let xv = if differentiable_input { g.input(x.clone()) } else { g.constant(x.clone()) };
        let y = layers::forward(&mut g, params, self.specs, xv)?;
        let r = g.constant(self.weights.clone());
        let prod = g.mul(y, r)?;
        let loss = g.sum(prod);
        Ok((g, xv, loss))
    }

    fn value(&self, params: &ParamSet, x: &Tensor) -> Result<f64, NnError> {
        let (g, _, loss) = self.loss(params, x, false)?;
        Ok(g.value(loss).data()[0])
    }
}

/// Compares analytic and numerical gradients of `specs` for all parameters
/// and, unless the stack starts with an embedding, for the input.
pub fn check_layers(specs: &[LayerSpec], rows: usize, seed: u64) -> Result<GradCheck, NnError> {
    let first = specs.first().ok_or_else(|| NnError::Argument("empty layer stack".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    layers::init_layers(&mut params, specs, Partition::SemanticEncoder, &mut rng);
    // move LayerNorm gains/biases off their trivial initial values
    for (_, e) in params.iter_mut() {
        for v in e.tensor.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let embed = matches!(first.kind, LayerKind::Embedding { .. });
    let x = if let LayerKind::Embedding { vocab, .. } = first.kind {
        Tensor::new(vec![rows, 1], (0..rows).map(|_| rng.random_range(0..vocab) as f64).collect())?
    } else {
        let w = input_width(&first.kind);
        Tensor::new(vec![rows, w], (0..rows * w).map(|_| rng.random_range(-1.5..1.5)).collect())?
    };
    let out_shape = {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = layers::forward(&mut g, &params, specs, xv)?;
        g.value(y).shape().to_vec()
    };
    let n_out = out_shape.iter().product();
    let weights = Tensor::new(out_shape, (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let probe = Probe { specs, weights };

    let (g, xv, loss) = probe.loss(&params, &x, !embed)?;
    let mut analytic_params = params.clone();
    g.backward(loss, &mut analytic_params)?;
    let grads = g.gradients(loss)?;

    let mut report = GradCheck { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let mut record = |name: &str, a: &[f64], n: &[f64]| {
        let e = relative_error(a, n);
        report.checked += a.len();
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e.max(report.max_rel_err);
            report.worst = name.to_string();
        }
    };

    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let analytic = analytic_params.tensor(name)?.grad().map(<[f64]>::to_vec).unwrap_or_default();
        let len = params.tensor(name)?.len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = params.tensor(name)?.data()[i];
            params.get_mut(name).expect("listed").tensor.data_mut()[i] = orig + FD_STEP;
            let up = probe.value(&params, &x)?;
            params.get_mut(name).expect("listed").tensor.data_mut()[i] = orig - FD_STEP;
            let down = probe.value(&params, &x)?;
            params.get_mut(name).expect("listed").tensor.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let analytic = if analytic.is_empty() { vec![0.0; len] } else { analytic };
        record(name, &analytic, &numeric);
    }
    if !embed {
        let analytic = grads.get(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);
        let mut numeric = vec![0.0; x.len()];
        let mut xp = x.clone();
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = x.data()[i];
            xp.data_mut()[i] = orig + FD_STEP;
            let up = probe.value(&params, &xp)?;
            xp.data_mut()[i] = orig - FD_STEP;
            let down = probe.value(&params, &xp)?;
            xp.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        record("input", &analytic, &numeric);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_passes_on_a_few_seeds() {
        for (kind, specs) in layer_kind_cases() {
            for seed in 0..3 {
                let r = check_layers(&specs, 3, seed).unwrap();
                assert!(r.max_rel_err < 1e-4, "{kind} seed {seed}: {r:?}");
                assert!(r.checked > 0);
            }
        }
    }

    #[test]
    fn stacked_layers_pass() {
        let specs = vec![
            LayerSpec::new("a", LayerKind::Dense { inp: 4, out: 6 }),
            LayerSpec::new("b", LayerKind::Sigmoid),
            LayerSpec::new("c", LayerKind::TransformerBlock { dim: 6, heads: 3, ff: 5 }),
            LayerSpec::new("d", LayerKind::Prediction { inp: 6, vocab: 5 }),
        ];
        assert!(check_layers(&specs, 4, 11).unwrap().max_rel_err < 1e-4);
    }

    #[test]
    fn relative_error_edge_cases() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-12);
        assert!(relative_error(&[0.0; 6], &[1e-10; 6]) < 1e-6);
    }
}
