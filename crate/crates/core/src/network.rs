//! The feature-pyramid generator and the joint segment/depth critic.
//!
//! Generator layout, for `L = encoder_depth` levels:
//!
//! ```text
//! input ─ stem ─ E1 ─ E2 ─ … ─ EL            (stride-2 residual levels)
//!                │    │         │
//!                └────┴── D ────┘            (bilinear up + skip, per level)
//!   resize to output ─ refine ×2 ─ [fuse with taps] ─ head ─ logits ─ depth head
//! ```
//!
//! With the encoder pyramid enabled each level also sees the input, area
//! downsampled to its resolution, through a 1×1 adapter. With the decoder
//! pyramid enabled the bottleneck and every intermediate decoder output are
//! tapped, resized to the output size and fused before the head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::filters::Resample;
use crate::losses::Critic;
use crate::nn::{dropout, lrelu, resize, Builder, Conv2d, ParamStore};
use crate::projection::CHANNELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub encoder_depth: usize,
    pub base_width: usize,
    /// Channel cap for deep levels.
    pub max_width: usize,
    /// Channels of each decoder tap before fusion.
    pub tap_width: usize,
    /// `(width, height)` of the range image.
    pub input_size: (usize, usize),
    /// `(width, height)` of the camera outputs.
    pub output_size: (usize, usize),
    pub dropout_p: f64,
    pub encoder_pyramid: bool,
    pub decoder_pyramid: bool,
    pub depth_head: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            encoder_depth: 3,
            base_width: 8,
            max_width: 32,
            tap_width: 4,
            input_size: (64, 16),
            output_size: (128, 32),
            dropout_p: 0.2,
            encoder_pyramid: true,
            decoder_pyramid: true,
            depth_head: true,
        }
    }
}

impl GeneratorConfig {
    pub fn in_channels(&self) -> usize {
        CHANNELS + self.num_classes
    }

    pub fn width_at(&self, level: usize) -> usize {
        (self.base_width << level.min(16)).min(self.max_width)
    }

    /// `(height, width)` of encoder level `k`, level 0 being the stem.
    pub fn resolution_at(&self, level: usize) -> (usize, usize) {
        (self.input_size.1 >> level, self.input_size.0 >> level)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes {} must be at least 2", self.num_classes));
        }
        if self.encoder_depth < 2 {
            return bad(format!("encoder_depth {} must be at least 2", self.encoder_depth));
        }
        if self.base_width == 0 || self.max_width < self.base_width || self.tap_width == 0 {
            return bad("channel widths must be positive with max_width >= base_width".into());
        }
        let (w, h) = self.input_size;
        let step = 1usize << self.encoder_depth;
        if w == 0 || h == 0 || w % step != 0 || h % step != 0 {
            return bad(format!("input size {w}x{h} must be a positive multiple of 2^{}", self.encoder_depth));
        }
        if self.output_size.0 < w || self.output_size.1 < h {
            return bad(format!("output size {:?} smaller than input size {:?}", self.output_size, self.input_size));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    down: Conv2d,
    inject: Option<Conv2d>,
    res1: Conv2d,
    res2: Conv2d,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    conv1: Conv2d,
    conv2: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    stem: Conv2d,
    encoder: Vec<EncoderLevel>,
    /// Ordered from the deepest level upward.
    decoder: Vec<DecoderLevel>,
    taps: Vec<Conv2d>,
    refine: [Conv2d; 2],
    fuse: Option<Conv2d>,
    head: Conv2d,
    depth: Option<[Conv2d; 3]>,
}

/// Generator outputs at the camera resolution.
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    /// `[B, C, h, w]` unnormalized class scores.
    pub logits: Var,
    /// `[B, 1, h, w]`, non-negative; absent without a depth head.
    pub depth: Option<Var>,
}

impl GeneratorOutput {
    pub fn probabilities(&self) -> Var {
        self.logits.softmax(1)
    }
}

impl Generator {
    /// Builds the generator and its freshly initialized parameters.
    pub fn build(cfg: &GeneratorConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let l = cfg.encoder_depth;
        let cin = cfg.in_channels();
        let stem = b.conv("stem", cin, cfg.width_at(0), 3, 1);
        let encoder = (1..=l)
            .map(|k| {
                let (prev, ch) = (cfg.width_at(k - 1), cfg.width_at(k));
                b.scoped(&format!("enc{k}"), |b| EncoderLevel {
                    down: b.conv("down", prev, ch, 3, 2),
                    inject: cfg.encoder_pyramid.then(|| b.conv("inject", ch + cin, ch, 1, 1)),
                    res1: b.conv("res1", ch, ch, 3, 1),
                    res2: b.conv("res2", ch, ch, 3, 1),
                })
            })
            .collect();
        let decoder = (0..l)
            .rev()
            .map(|k| {
                let ch = cfg.width_at(k);
                b.scoped(&format!("dec{k}"), |b| DecoderLevel {
                    conv1: b.conv("conv1", cfg.width_at(k + 1) + ch, ch, 3, 1),
                    conv2: b.conv("conv2", ch, ch, 3, 1),
                })
            })
            .collect();
        let taps = if cfg.decoder_pyramid {
            (1..=l).rev().map(|k| b.conv(&format!("tap{k}"), cfg.width_at(k), cfg.tap_width, 1, 1)).collect()
        } else {
            Vec::new()
        };
        let w0 = cfg.width_at(0);
        let refine = [b.conv("refine1", w0, w0, 3, 1), b.conv("refine2", w0, w0, 3, 1)];
        let fuse = cfg.decoder_pyramid.then(|| b.conv("fuse", w0 + l * cfg.tap_width, w0, 1, 1));
        let head = b.conv("head", w0, cfg.num_classes, 1, 1);
        let depth = cfg.depth_head.then(|| {
            b.scoped("depth", |b| {
                [b.conv("conv1", cfg.num_classes, w0, 3, 1), b.conv("conv2", w0, w0, 3, 1), b.conv("conv3", w0, 1, 3, 1)]
            })
        });
        let g = Self { cfg: cfg.clone(), stem, encoder, decoder, taps, refine, fuse, head, depth };
        Ok((g, store))
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn injection_adapters(&self) -> usize {
        self.encoder.iter().filter(|e| e.inject.is_some()).count()
    }

    pub fn decoder_taps(&self) -> usize {
        self.taps.len()
    }

    /// `input` is `[B, 5 + C, h′, w′]`: range-image channels then the
    /// one-hot LiDAR segments. Passing `rng` enables dropout.
    pub fn forward(&self, p: &[Var], input: &Var, mut rng: Option<&mut ChaCha8Rng>) -> Result<GeneratorOutput> {
        let cfg = &self.cfg;
        let s = input.shape();
        let (w, h) = cfg.input_size;
        if s.len() != 4 || s[1] != cfg.in_channels() || s[2] != h || s[3] != w {
            return Err(Error::shape(format!(
                "generator expects [B,{},{h},{w}], got {s:?}",
                cfg.in_channels()
            )));
        }
        let mut skips = vec![lrelu(&self.stem.forward(p, input)?)];
        for (i, level) in self.encoder.iter().enumerate() {
            let mut x = lrelu(&level.down.forward(p, &skips[i])?);
            if let Some(inject) = &level.inject {
                let small = resize(input, cfg.resolution_at(i + 1), Resample::Area);
                x = lrelu(&inject.forward(p, &Var::concat(&[x, small], 1))?);
            }
            let r = level.res2.forward(p, &lrelu(&level.res1.forward(p, &x)?))?;
            let x = lrelu(&x.add(&r));
            skips.push(dropout(&x, cfg.dropout_p, rng.as_deref_mut()));
        }

        let out_hw = (cfg.output_size.1, cfg.output_size.0);
        let l = cfg.encoder_depth;
        let mut d = skips[l].clone();
        let mut tapped = vec![d.clone()];
        for (j, level) in self.decoder.iter().enumerate() {
            let k = l - 1 - j;
            let up = resize(&d, cfg.resolution_at(k), Resample::Bilinear);
            d = lrelu(&level.conv1.forward(p, &Var::concat(&[up, skips[k].clone()], 1))?);
            d = lrelu(&level.conv2.forward(p, &d)?);
            if k > 0 {
                tapped.push(d.clone());
            }
        }

        let mut y = resize(&d, out_hw, Resample::Bilinear);
        for conv in &self.refine {
            y = lrelu(&conv.forward(p, &y)?);
        }
        if let Some(fuse) = &self.fuse {
            let mut parts = vec![y];
            for (tap, feat) in self.taps.iter().zip(&tapped) {
                parts.push(resize(&tap.forward(p, feat)?, out_hw, Resample::Bilinear));
            }
            y = lrelu(&fuse.forward(p, &Var::concat(&parts, 1))?);
        }
        let logits = self.head.forward(p, &y)?;
        let depth = match &self.depth {
            Some([c1, c2, c3]) => {
                let z = lrelu(&c1.forward(p, &logits)?);
                let z = lrelu(&c2.forward(p, &z)?);
                Some(c3.forward(p, &z)?.softplus())
            }
            None => None,
        };
        Ok(GeneratorOutput { logits, depth })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// Output channels of each stride-2 convolution.
    pub widths: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { widths: vec![8, 16, 32] }
    }
}

/// Critic over `concat(condition, segments, depth)`, averaged spatially.
#[derive(Clone, Debug)]
pub struct Discriminator {
    classes: usize,
    uses_depth: bool,
    convs: Vec<Conv2d>,
    score: Conv2d,
}

impl Discriminator {
    pub fn build(cfg: &DiscriminatorConfig, classes: usize, uses_depth: bool, seed: u64) -> Result<(Self, ParamStore)> {
        if cfg.widths.is_empty() || cfg.widths.contains(&0) {
            return Err(Error::config("critic widths must be a nonempty list of positive sizes"));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let mut ch = 2 * classes + usize::from(uses_depth);
        let convs = cfg
            .widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = b.conv(&format!("conv{}", i + 1), ch, w, 3, 2);
                ch = w;
                c
            })
            .collect();
        let score = b.conv("score", ch, 1, 1, 1);
        Ok((Self { classes, uses_depth, convs, score }, store))
    }

    pub fn uses_depth(&self) -> bool {
        self.uses_depth
    }

    /// Scores `[B]` for segment planes `[B,C,h,w]`, depth `[B,1,h,w]` and
    /// the one-hot condition `[B,C,h,w]`. Depth is ignored by a critic built
    /// without it.
    pub fn forward(&self, p: &[Var], seg: &Var, depth: &Var, cond: &Var) -> Result<Var> {
        let s = seg.shape();
        if s.len() != 4 || s[1] != self.classes || cond.shape() != s {
            return Err(Error::shape(format!("critic segments {s:?} vs condition {:?}", cond.shape())));
        }
        let mut parts = vec![cond.clone(), seg.clone()];
        if self.uses_depth {
            if depth.shape() != [s[0], 1, s[2], s[3]] {
                return Err(Error::shape(format!("critic depth {:?} for segments {s:?}", depth.shape())));
            }
            parts.push(depth.clone());
        }
        let mut x = Var::concat(&parts, 1);
        for conv in &self.convs {
            x = lrelu(&conv.forward(p, &x)?);
        }
        let y = self.score.forward(p, &x)?;
        let (b, n) = (s[0], y.shape()[2] * y.shape()[3]);
        Ok(y.reshape(&[b, n]).sum_to(&[b, 1]).scale(1.0 / n as f64).reshape(&[b]))
    }

    pub fn bind<'a>(&'a self, params: &'a [Var]) -> BoundCritic<'a> {
        BoundCritic { model: self, params }
    }
}

/// A critic paired with a set of parameter values.
pub struct BoundCritic<'a> {
    model: &'a Discriminator,
    params: &'a [Var],
}

impl Critic for BoundCritic<'_> {
    fn score(&self, seg: &Var, depth: &Var, condition: &Var) -> Result<Var> {
        self.model.forward(self.params, seg, depth, condition)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn input(cfg: &GeneratorConfig, b: usize) -> Var {
        let (w, h) = cfg.input_size;
        Var::constant(Tensor::from_fn(&[b, cfg.in_channels(), h, w], |i| ((i * 31) % 19) as f64 / 19.0))
    }

    #[test]
    fn toy_shapes() {
        let cfg = GeneratorConfig::default();
        let (g, p) = Generator::build(&cfg, 0).unwrap();
        let out = g.forward(&p.bind(false), &input(&cfg, 2), None).unwrap();
        assert_eq!(out.logits.shape(), &[2, 4, 32, 128]);
        let d = out.depth.unwrap();
        assert_eq!(d.shape(), &[2, 1, 32, 128]);
        assert!(d.value().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_wrong_input() {
        let cfg = GeneratorConfig::default();
        let (g, p) = Generator::build(&cfg, 0).unwrap();
        let bad = Var::constant(Tensor::zeros(&[1, 8, 16, 64]));
        assert!(matches!(g.forward(&p.bind(false), &bad, None), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = GeneratorConfig { encoder_depth: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg.encoder_depth = 3;
        cfg.output_size = (32, 32);
        assert!(cfg.validate().is_err());
        cfg.output_size = (128, 32);
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn adapter_counts() {
        let cfg = GeneratorConfig { encoder_depth: 4, ..Default::default() };
        let (g, _) = Generator::build(&cfg, 0).unwrap();
        assert_eq!((g.injection_adapters(), g.decoder_taps()), (4, 4));
    }

    #[test]
    fn zero_critic_scores_zero() {
        let (d, mut p) = Discriminator::build(&DiscriminatorConfig::default(), 4, true, 1).unwrap();
        p.zero();
        let seg = Var::constant(Tensor::full(&[3, 4, 32, 128], 0.25));
        let depth = Var::constant(Tensor::ones(&[3, 1, 32, 128]));
        let s = d.forward(&p.bind(false), &seg, &depth, &seg).unwrap();
        assert_eq!(s.value().data(), &[0.0, 0.0, 0.0]);
    }
}
