//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment accumulators for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { m: zeros(), v: zeros(), steps: 0 }
    }

    /// `θ ← θ − lr · m̂ / (√v̂ + eps)`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.shape() != p.shape() {
                return Err(Error::shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                *x -= cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_update_on_quadratic() {
        // f(x) = (x − 3)², x₀ = 1.
        let mut p = ParamStore::from_pairs(vec![("x".into(), Tensor::scalar(1.0))]);
        let cfg = AdamConfig { lr: 0.1, beta1: 0.5, beta2: 0.999, eps: 1e-8 };
        let mut adam = Adam::new(&p);
        let mut x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (p.values()[0].item() - 3.0);
            adam.step(&mut p, &[Tensor::scalar(g)], &cfg).unwrap();
            m = 0.5 * m + 0.5 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.5f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p.values()[0].item() - x).abs() < 1e-10);
        }
        // The first step moves by lr regardless of gradient scale.
        let mut q = ParamStore::from_pairs(vec![("x".into(), Tensor::scalar(1.0))]);
        Adam::new(&q).step(&mut q, &[Tensor::scalar(-4.0)], &cfg).unwrap();
        assert!((q.values()[0].item() - 1.1).abs() < 1e-8);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = ParamStore::from_pairs(vec![("w".into(), Tensor::ones(&[3]))]);
        let before = p.clone();
        let cfg = AdamConfig { lr: 0.0, ..Default::default() };
        Adam::new(&p).step(&mut p, &[Tensor::full(&[3], 2.0)], &cfg).unwrap();
        assert_eq!(p, before);
    }
}
