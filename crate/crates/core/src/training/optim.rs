use serde::{Deserialize, Serialize};

use crate::numeric::{Parameters, Real, Tensor};

use super::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling; gradients above it are rescaled.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, clip_norm: 5.0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.clip_norm > 0.0;
        if !ok {
            return Err(TrainingError::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair of tensors per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<(String, Tensor<T>)>,
    pub v: Vec<(String, Tensor<T>)>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: Parameters<T>>(params: &P) -> Self {
        let zeros: Vec<_> = params.tensors().into_iter().map(|(n, t)| (n, t.zeros_like())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    /// Clips `grads` to the configured global norm, then applies one update
    /// with learning rate `lr`. Returns the gradient norm before clipping.
    pub fn update<P: Parameters<T>>(
        &mut self,
        cfg: &AdamConfig,
        lr: f64,
        params: &mut P,
        grads: &P,
    ) -> Result<f64, TrainingError> {
        let norm = grads.sum_squares().as_f64().sqrt();
        if !norm.is_finite() {
            return Err(TrainingError::NonFinite("gradient norm".into()));
        }
        let clip = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let step_size = T::from_f64(lr * c2.sqrt() / c1);
        let eps_hat = T::from_f64(cfg.epsilon * c2.sqrt());
        let (b1t, b2t, clip_t) = (T::from_f64(b1), T::from_f64(b2), T::from_f64(clip));
        let grads = grads.tensors();
        let mut slots = params.tensors_mut();
        if slots.len() != self.m.len() || grads.len() != slots.len() {
            return Err(TrainingError::Config("optimizer state does not match the parameters".into()));
        }
        for (k, (name, p)) in slots.iter_mut().enumerate() {
            let (gname, g) = &grads[k];
            if gname != name || self.m[k].0 != *name || g.dims() != p.dims() {
                return Err(TrainingError::Config(format!("optimizer slot mismatch at {name}")));
            }
            let m = self.m[k].1.data_mut();
            let v = self.v[k].1.data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let g = g * clip_t;
                *m = b1t * *m + (T::one() - b1t) * g;
                *v = b2t * *v + (T::one() - b2t) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps_hat);
            }
        }
        Ok(norm)
    }
}
