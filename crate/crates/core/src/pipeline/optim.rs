use serde::{Deserialize, Serialize};

use super::model::Params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Blocks flagged as frozen are never touched.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    frozen: Vec<bool>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Params, frozen: impl Fn(&str) -> bool) -> Self {
        let blocks = params.blocks();
        Adam {
            config,
            step: 0,
            m: blocks.iter().map(|b| vec![0.0; b.data.len()]).collect(),
            v: blocks.iter().map(|b| vec![0.0; b.data.len()]).collect(),
            frozen: blocks.iter().map(|b| frozen(&b.name)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.step = self.step.saturating_add(1);
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let grads = grad.blocks();
        for (bi, p) in params.blocks_mut().into_iter().enumerate() {
            if self.frozen[bi] {
                continue;
            }
            let (m, v, g) = (&mut self.m[bi], &mut self.v[bi], grads[bi].data);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

/// Rescales `grad` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut Params, max_norm: f64) -> f64 {
    let norm = grad.global_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for block in grad.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}
