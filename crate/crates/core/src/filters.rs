//! Constant row/column matrices for [`SeparableMap`]: resampling, pooling,
//! sliding windows and finite-difference stencils.

use crate::autodiff::SeparableMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    Bilinear,
    /// Mean over the source cells each output cell covers.
    Area,
    Nearest,
}

/// `[out, inp]` resampling matrix along one axis.
pub fn resample_matrix(out: usize, inp: usize, kind: Resample) -> Tensor {
    let mut m = Tensor::zeros(&[out, inp]);
    let scale = inp as f64 / out as f64;
    let d = m.data_mut();
    for i in 0..out {
        match kind {
            Resample::Bilinear => {
                let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                let t = src - i0 as f64;
                d[i * inp + i0] += 1.0 - t;
                d[i * inp + i1] += t;
            }
            Resample::Area => {
                let lo = i as f64 * scale;
                let hi = (i + 1) as f64 * scale;
                let mut j = lo.floor() as usize;
                while (j as f64) < hi && j < inp {
                    let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                    d[i * inp + j] += overlap / (hi - lo);
                    j += 1;
                }
            }
            Resample::Nearest => {
                let j = (((i as f64 + 0.5) * scale).floor() as usize).min(inp - 1);
                d[i * inp + j] = 1.0;
            }
        }
    }
    m
}

/// Resizes `[.., h, w]` planes to `out = (height, width)`.
pub fn resize_map(inp: (usize, usize), out: (usize, usize), kind: Resample) -> SeparableMap {
    SeparableMap::new(resample_matrix(out.0, inp.0, kind), resample_matrix(out.1, inp.1, kind))
}

/// `[n − k + 1, n]` matrix of a "valid" 1D correlation with `kernel`.
pub fn valid_filter_matrix(n: usize, kernel: &[f64]) -> Tensor {
    let k = kernel.len();
    assert!(k <= n, "kernel of {k} taps does not fit {n} samples");
    let rows = n - k + 1;
    Tensor::from_fn(&[rows, n], |idx| {
        let (r, c) = (idx / n, idx % n);
        if c >= r && c < r + k {
            kernel[c - r]
        } else {
            0.0
        }
    })
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub const SECOND_DIFF: [f64; 3] = [1.0, -2.0, 1.0];
pub const CENTRAL_DIFF: [f64; 3] = [-0.5, 0.0, 0.5];
/// Selects the interior sample of a three-tap window.
pub const CENTER: [f64; 3] = [0.0, 1.0, 0.0];
