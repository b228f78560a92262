//! Named parameter storage and the few layers the models are built from.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{SeparableMap, Var};
use crate::error::{Error, Result};
use crate::filters::{resize_map, Resample};
use crate::tensor::{ConvGeom, Tensor};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Parameters in registration order. Models refer to them by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    fn push(&mut self, name: String, value: Tensor) -> usize {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    /// Sets every parameter to zero.
    pub fn zero(&mut self) {
        for v in &mut self.values {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Graph leaves for every parameter, or constants when not training.
    pub fn bind(&self, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|t| if trainable { Var::leaf(t.clone()) } else { Var::constant(t.clone()) })
            .collect()
    }

    /// Replaces values with `other`'s, checking names and shapes match.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::invalid("parameter names differ from the model layout"));
        }
        for ((name, dst), src) in self.names.iter().zip(&mut self.values).zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::shape(format!("{name}: stored {:?}, expected {:?}", src.shape(), dst.shape())));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    /// Builds a store from `(name, tensor)` pairs.
    pub fn from_pairs(pairs: Vec<(String, Tensor)>) -> Self {
        let (names, values) = pairs.into_iter().unzip();
        Self { names, values }
    }
}

/// Registers parameters under a name prefix with seeded initialization.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Builder) -> T) -> T {
        let saved = self.prefix.clone();
        self.prefix = format!("{saved}{name}.");
        let out = f(self);
        self.prefix = saved;
        out
    }

    fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> usize {
        let dist = Normal::new(0.0, std).expect("finite std");
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| dist.sample(rng));
        self.store.push(format!("{}{name}", self.prefix), t)
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.store.push(format!("{}{name}", self.prefix), Tensor::zeros(shape))
    }

    pub fn conv(&mut self, name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Conv2d {
        self.scoped(name, |b| {
            let fan_in = (in_ch * kernel * kernel) as f64;
            let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
            let weight = b.normal("weight", &[out_ch, in_ch * kernel * kernel], std);
            let bias = b.zeros("bias", &[1, out_ch, 1, 1]);
            Conv2d { weight, bias, in_ch, out_ch, kernel, stride, pad: kernel / 2 }
        })
    }
}

/// 2D convolution with "same"-style padding `kernel / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn forward(&self, p: &[Var], x: &Var) -> Result<Var> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_ch {
            return Err(Error::shape(format!("conv expects [B,{},H,W], got {s:?}", self.in_ch)));
        }
        let geom = ConvGeom { channels: s[1], height: s[2], width: s[3], kernel: self.kernel, stride: self.stride, pad: self.pad };
        let (b, ho, wo) = (s[0], geom.out_height(), geom.out_width());
        let cols = if self.kernel == 1 && self.stride == 1 {
            x.reshape(&[b, s[1], s[2] * s[3]])
        } else {
            x.im2col(geom)
        };
        let y = p[self.weight].matmul_left(&cols).reshape(&[b, self.out_ch, ho, wo]);
        Ok(y.add(&p[self.bias]))
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * (self.in_ch * self.kernel * self.kernel + 1)
    }
}

pub fn lrelu(x: &Var) -> Var {
    x.leaky_relu(LEAKY_SLOPE)
}

/// Inverted dropout; identity when `rng` is `None` or `p == 0`.
pub fn dropout(x: &Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask = Tensor::from_fn(x.shape(), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
            x.mul_const(&mask)
        }
        _ => x.clone(),
    }
}

/// Resize of `[B,C,H,W]` to `(height, width)`.
pub fn resize(x: &Var, out: (usize, usize), kind: Resample) -> Var {
    let s = x.shape();
    if (s[2], s[3]) == out {
        return x.clone();
    }
    x.separable_map(&resize_map((s[2], s[3]), out, kind))
}

/// Like [`resize`] for plain tensors.
pub fn resize_tensor(x: &Tensor, out: (usize, usize), kind: Resample) -> Tensor {
    let s = x.shape();
    if (s[2], s[3]) == out {
        return x.clone();
    }
    let m: SeparableMap = resize_map((s[2], s[3]), out, kind);
    m.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_matches_direct_sum() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Builder::new(&mut store, &mut rng).conv("c", 2, 3, 3, 2);
        store.values_mut()[conv.bias] = Tensor::from_fn(&[1, 3, 1, 1], |i| i as f64);
        let x = Tensor::from_fn(&[1, 2, 5, 4], |i| ((i * 7) % 11) as f64 - 5.0);
        let p = store.bind(false);
        let y = conv.forward(&p, &Var::constant(x.clone())).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 2]);
        let w = &store.values()[conv.weight];
        for o in 0..3 {
            for i in 0..3 {
                for j in 0..2 {
                    let mut acc = o as f64;
                    for c in 0..2 {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let (r, q) = ((2 * i + di) as isize - 1, (2 * j + dj) as isize - 1);
                                if r >= 0 && r < 5 && q >= 0 && q < 4 {
                                    acc += w.data()[o * 18 + c * 9 + di * 3 + dj] * x.data()[c * 20 + r as usize * 4 + q as usize];
                                }
                            }
                        }
                    }
                    let got = y.value().data()[o * 6 + i * 2 + j];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn builder_is_seeded_and_named() {
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut b = Builder::new(&mut store, &mut rng);
            b.scoped("enc", |b| b.conv("down", 4, 8, 3, 2));
            store
        };
        let a = build();
        assert_eq!(a, build());
        assert_eq!(a.names(), &["enc.down.weight", "enc.down.bias"]);
        assert_eq!(a.count(), 8 * 36 + 8);
    }

    #[test]
    fn dropout_scales_kept_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Var::constant(Tensor::ones(&[1, 1, 50, 50]));
        let y = dropout(&x, 0.2, Some(&mut rng));
        assert!(y.value().data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        assert!((y.value().mean() - 1.0).abs() < 0.05);
        assert_eq!(dropout(&x, 0.2, None).value(), x.value());
    }
}
