//! Adam optimizer over flat parameter slices.

use super::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment state is kept per tensor, in the order tensors are passed to
/// [`Adam::step`]; that order must stay fixed across steps.
#[derive(Debug, Clone)]
pub struct Adam<F: Real> {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let one = F::one();
        let bias1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let step_size = F::from_f64(self.cfg.lr / bias1);
        let bias2_sqrt = F::from_f64(bias2.sqrt());
        let eps = F::from_f64(self.cfg.eps);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let denom = v[i].sqrt() / bias2_sqrt + eps;
                p[i] = p[i] - step_size * m[i] / denom;
            }
        }
    }
}
