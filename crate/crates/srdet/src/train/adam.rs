//! Adam optimizer over a [`ParamSet`].

use crate::nn::ParamSet;
use crate::tensor::quantize_f32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let m = (0..params.len())
            .map(|i| vec![0.0; params.tensor(i).len()])
            .collect();
        let v = (0..params.len())
            .map(|i| vec![0.0; params.tensor(i).len()])
            .collect();
        Self { cfg, t: 0, m, v }
    }

    /// One update. `grads[i]` is the gradient for parameter tensor i, or
    /// `None` when the tensor was disconnected from the loss (treated as
    /// zero gradient). Parameter writes are quantized through f32 so the
    /// in-memory state always matches the checkpoint wire format.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>]) {
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let zero;
            let g: &[f64] = match &grads[i] {
                Some(g) => g,
                None => {
                    zero = vec![0.0; params.tensor(i).len()];
                    &zero
                }
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.tensor_mut(i);
            for j in 0..p.data.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let next = p.data[j] - self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                p.data[j] = quantize_f32(next);
            }
        }
    }
}
