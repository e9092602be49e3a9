use std::collections::BTreeMap;

use super::tensor::ParamSet;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with per-parameter moment buffers keyed by parameter name.
///
/// Masked (pruned) entries receive no update and are re-zeroed after every
/// step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub hyper: AdamHyper,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_hyper(lr, AdamHyper::default())
    }

    pub fn with_hyper(lr: f64, hyper: AdamHyper) -> Self {
        Self { lr, hyper, clip_norm: None, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients and clears them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), NnError> {
        if params.iter().all(|(_, e)| e.tensor.grad().is_none()) {
            return Err(NnError::State("optimizer step without gradients".into()));
        }
        let clip = match self.clip_norm {
            Some(max) => {
                let norm = params
                    .iter()
                    .filter_map(|(_, e)| e.tensor.grad())
                    .flat_map(|g| g.iter())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, entry) in params.iter_mut() {
            let Some(grad) = entry.tensor.grad().map(<[f64]>::to_vec) else { continue };
            let n = grad.len();
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let mask = entry.mask.clone();
            let data = entry.tensor.data_mut();
            for i in 0..n {
                if mask.as_ref().is_some_and(|mk| !mk[i]) {
                    data[i] = 0.0;
                    continue;
                }
                let g = grad[i] * clip;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + eps);
            }
            entry.tensor.zero_grad();
        }
        Ok(())
    }
}
