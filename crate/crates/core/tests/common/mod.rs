#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use titan_core::autodiff::{grad_values, Var};
use titan_core::losses::{lovasz_softmax, Critic};
use titan_core::tensor::Tensor;
use titan_core::Result;

/// Analytic gradient of scalar `f` at `x` and its central difference with step `h`.
pub fn gradients(f: &dyn Fn(&Var) -> Var, x: &Tensor, h: f64) -> (Vec<f64>, Vec<f64>) {
    let leaf = Var::leaf(x.clone());
    let analytic = grad_values(&f(&leaf), &[leaf])[0].data().to_vec();
    let numeric = (0..x.numel())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&Var::constant(p)).item() - f(&Var::constant(m)).item()) / (2.0 * h)
        })
        .collect();
    (analytic, numeric)
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `1 − |P ∩ G| / |P ∪ G|` averaged over classes present in `gt`.
pub fn jaccard_oracle(pred: &[u8], gt: &[u8], classes: usize) -> f64 {
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..classes as u8 {
        if !gt.contains(&c) {
            continue;
        }
        present += 1;
        let inter = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g == c).count() as f64;
        let union = pred.iter().zip(gt).filter(|(p, g)| **p == c || **g == c).count() as f64;
        total += 1.0 - inter / union;
    }
    if present == 0 {
        0.0
    } else {
        total / present as f64
    }
}

/// Every labeling of `n` pixels with `classes` classes, as base-`classes` digits.
pub fn labelings(n: usize, classes: usize) -> Vec<Vec<u8>> {
    let total = classes.pow(n as u32);
    (0..total)
        .map(|mut k| {
            (0..n)
                .map(|_| {
                    let d = (k % classes) as u8;
                    k /= classes;
                    d
                })
                .collect()
        })
        .collect()
}

/// Largest |Lovász − oracle| over all hard predictions and labelings.
pub fn lovasz_oracle_gap(max_pixels: usize, class_counts: &[usize]) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &classes in class_counts {
        for n in 1..=max_pixels {
            let all = labelings(n, classes);
            for pred in &all {
                let probs = Tensor::from_fn(&[1, classes, 1, n], |i| (pred[i % n] as usize == i / n) as u8 as f64);
                let probs = Var::constant(probs);
                for gt in &all {
                    let l = lovasz_softmax(&probs, gt).unwrap().item();
                    worst = worst.max((l - jaccard_oracle(pred, gt, classes)).abs());
                    cases += 1;
                }
            }
        }
    }
    (worst, cases)
}

/// `D(s, d, c) = b` for every input.
pub struct ConstantCritic(pub f64);

impl Critic for ConstantCritic {
    fn score(&self, seg: &Var, _depth: &Var, _condition: &Var) -> Result<Var> {
        let b = seg.shape()[0];
        Ok(Var::constant(Tensor::full(&[b], self.0)))
    }
}

/// `D(s, d, c) = ⟨w_s, s⟩ + ⟨w_d, d⟩` per sample.
pub struct LinearCritic {
    pub w_seg: Tensor,
    pub w_depth: Tensor,
}

impl LinearCritic {
    /// Random weights scaled to unit joint norm.
    pub fn unit(seg_shape: &[usize], depth_shape: &[usize], seed: u64) -> Self {
        let mut r = rng(seed);
        let mut w_seg = uniform(seg_shape, -1.0, 1.0, &mut r);
        let mut w_depth = uniform(depth_shape, -1.0, 1.0, &mut r);
        let n = (w_seg.data().iter().chain(w_depth.data()).map(|x| x * x).sum::<f64>()).sqrt();
        w_seg.data_mut().iter_mut().for_each(|x| *x /= n);
        w_depth.data_mut().iter_mut().for_each(|x| *x /= n);
        Self { w_seg, w_depth }
    }
}

impl Critic for LinearCritic {
    fn score(&self, seg: &Var, depth: &Var, _condition: &Var) -> Result<Var> {
        let b = seg.shape()[0];
        let per = |v: &Var, w: &Tensor| {
            let n = w.numel();
            v.mul_const(&w.reshape(&[1, n]).broadcast_to(&[b, n]).reshape(v.shape())).reshape(&[b, n]).sum_to(&[b, 1])
        };
        Ok(per(seg, &self.w_seg).add(&per(depth, &self.w_depth)).reshape(&[b]))
    }
}
