//! AdamW: Adam with decoupled weight decay.

use crate::model::LifterWeights;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer state: first/second moments per parameter tensor, aligned with
/// the canonical weight order.
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
}

impl AdamW {
    pub fn new(weights: &LifterWeights<f32>, cfg: AdamWConfig) -> Self {
        let mut m = Vec::new();
        weights.visit(|_, t| m.push(Tensor::zeros(t.shape().to_vec())));
        let v = m.clone();
        AdamW { cfg, step: 0, m, v }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    /// One update. `grads` and `trainable` are aligned with the canonical
    /// weight order; a missing gradient counts as zero (the tensor still
    /// decays and its moments still update). Frozen tensors are untouched.
    pub fn step(
        &mut self,
        weights: &mut LifterWeights<f32>,
        grads: &[Option<Tensor<f32>>],
        lr: f64,
        trainable: &[bool],
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let (b1, b2) = (self.cfg.beta1 as f32, self.cfg.beta2 as f32);
        let eps = self.cfg.eps as f32;
        let lr32 = lr as f32;
        let decay = (lr * self.cfg.weight_decay) as f32;
        let (inv_bc1, inv_bc2) = ((1.0 / bc1) as f32, (1.0 / bc2) as f32);

        let mut idx = 0;
        weights.visit_mut(|_, param| {
            let i = idx;
            idx += 1;
            if !trainable[i] {
                return;
            }
            let grad = grads[i].as_ref();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = param.data_mut();
            for e in 0..p.len() {
                let g = grad.map_or(0.0, |g| g.data()[e]);
                m[e] = b1 * m[e] + (1.0 - b1) * g;
                v[e] = b2 * v[e] + (1.0 - b2) * g * g;
                let m_hat = m[e] * inv_bc1;
                let v_hat = v[e] * inv_bc2;
                // Decoupled decay applied alongside the Adam update, both
                // from the pre-update parameter value.
                p[e] -= decay * p[e] + lr32 * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

/// Cosine decay from `lr_max` at step 0 to zero at `total_steps`, no warmup.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let progress = (step as f64 / total_steps as f64).min(1.0);
    lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
