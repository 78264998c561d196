//! AdamW with decoupled weight decay, linear learning-rate warmup to a
//! constant, and optional global-norm gradient clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Global-norm clip threshold; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl OptimizerConfig {
    /// Masked-regime defaults: betas (0.9, 0.96), lr 1e-4, desk-scale warmup.
    pub fn masked_default() -> Self {
        OptimizerConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.96,
            eps: 1e-8,
            weight_decay: 0.045,
            warmup_steps: 200,
            grad_clip: Some(1.0),
        }
    }

    /// Diffusion-regime defaults: betas (0.9, 0.99), lr 1e-4.
    pub fn diffusion_default() -> Self {
        OptimizerConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 200,
            grad_clip: Some(1.0),
        }
    }

    /// Linear warmup to the constant base rate.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr;
        }
        let ramp = ((step + 1) as f64 / self.warmup_steps as f64).min(1.0);
        self.lr * ramp
    }
}

/// First/second moment accumulators per named parameter.
#[derive(Debug, Default)]
pub struct OptimizerState {
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new() -> Self {
        OptimizerState::default()
    }

    /// One AdamW update for a single named tensor. Weight decay is decoupled:
    /// applied directly to the parameter, scaled by the current lr.
    pub fn update(
        &mut self,
        cfg: &OptimizerConfig,
        name: &str,
        param: &mut Tensor,
        grad: &Tensor,
    ) {
        debug_assert_eq!(param.shape(), grad.shape(), "moment shapes match params");
        let lr = cfg.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for ((p, g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data().iter())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *p);
        }
    }

    /// Advance the shared step count after all tensors are updated.
    pub fn finish_step(&mut self) {
        self.step += 1;
    }
}

/// L2 norm over a set of gradient tensors.
pub fn global_grad_norm<'a>(grads: impl Iterator<Item = &'a Tensor>) -> f64 {
    grads
        .flat_map(|t| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scale factor that caps the global norm at `clip` (1.0 when under the cap).
pub fn clip_factor(norm: f64, clip: f64) -> f64 {
    if norm > clip && norm > 0.0 {
        clip / norm
    } else {
        1.0
    }
}
