//! Training objectives: weighted cross-entropy and Lovász-Softmax for the
//! segment output, inverse depth smoothness, MAE and SSIM for the depth
//! output, and the Wasserstein gradient-penalty critic/generator losses.
//!
//! Segment inputs are probability tensors `[B, C, H, W]` with labels given
//! as a flat `B·H·W` slice; [`IGNORE`] labels are skipped. Depth inputs are
//! `[B, 1, H, W]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, SeparableMap, Var};
use crate::error::{Error, Result};
use crate::filters::{gaussian_window, valid_filter_matrix, CENTER, CENTRAL_DIFF, SECOND_DIFF};
use crate::image::IGNORE;
use crate::tensor::Tensor;

pub const DEFAULT_GP_LAMBDA: f64 = 10.0;
const LOG_CLAMP: f64 = 1e-12;
const PROB_SUM_TOL: f64 = 1e-5;

/// Per-class pixel frequencies and the derived weights `α = 1/√f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequencies {
    freq: Vec<f64>,
}

impl ClassFrequencies {
    pub fn new(freq: Vec<f64>) -> Result<Self> {
        if freq.is_empty() {
            return Err(Error::invalid("class frequencies are empty"));
        }
        if let Some((i, f)) = freq.iter().enumerate().find(|(_, f)| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::invalid(format!("class {i} frequency {f} outside (0, 1]")));
        }
        Ok(Self { freq })
    }

    pub fn uniform(classes: usize) -> Self {
        Self { freq: vec![1.0 / classes as f64; classes] }
    }

    /// Frequencies from pixel counts. Classes never seen are counted once so
    /// their weight stays finite.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let adjusted: Vec<f64> = counts.iter().map(|&c| c.max(1) as f64).collect();
        let total: f64 = adjusted.iter().sum();
        Self::new(adjusted.into_iter().map(|c| c / total).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.freq.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freq
    }

    pub fn weights(&self) -> Vec<f64> {
        self.freq.iter().map(|f| 1.0 / f.sqrt()).collect()
    }
}

struct SegLayout {
    batch: usize,
    classes: usize,
    plane: usize,
}

fn seg_layout(probs: &Var, labels: &[u8], check_sums: bool) -> Result<SegLayout> {
    let s = probs.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("probabilities must be [B,C,H,W], got {s:?}")));
    }
    let (batch, classes, plane) = (s[0], s[1], s[2] * s[3]);
    if labels.len() != batch * plane {
        return Err(Error::shape(format!("{} labels for probabilities of shape {s:?}", labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l != IGNORE && l as usize >= classes) {
        return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
    }
    if check_sums {
        let p = probs.value().data();
        for b in 0..batch {
            for i in 0..plane {
                let sum: f64 = (0..classes).map(|c| p[(b * classes + c) * plane + i]).sum();
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(Error::invalid(format!("pixel {i} of item {b} has probability mass {sum}")));
                }
            }
        }
    }
    Ok(SegLayout { batch, classes, plane })
}

/// Mean over labelled pixels of `−α_y · log p_y`.
pub fn weighted_cross_entropy(probs: &Var, labels: &[u8], freqs: &ClassFrequencies) -> Result<Var> {
    let l = seg_layout(probs, labels, true)?;
    if freqs.num_classes() != l.classes {
        return Err(Error::invalid(format!(
            "{} class frequencies for {} classes",
            freqs.num_classes(),
            l.classes
        )));
    }
    let alpha = freqs.weights();
    let valid = labels.iter().filter(|&&y| y != IGNORE).count();
    if valid == 0 {
        return Ok(Var::scalar(0.0));
    }
    let mut w = Tensor::zeros(probs.shape());
    let wd = w.data_mut();
    for b in 0..l.batch {
        for i in 0..l.plane {
            let y = labels[b * l.plane + i];
            if y != IGNORE {
                wd[(b * l.classes + y as usize) * l.plane + i] = -alpha[y as usize] / valid as f64;
            }
        }
    }
    Ok(probs.clamp_min(LOG_CLAMP).ln().mul_const(&w).sum())
}

/// Lovász extension weights for errors of one class sorted in decreasing
/// order; `fg_sorted[i]` is whether the i-th pixel belongs to the class.
fn lovasz_grad(fg_sorted: &[bool]) -> Vec<f64> {
    let gts = fg_sorted.iter().filter(|&&f| f).count() as f64;
    let mut out = Vec::with_capacity(fg_sorted.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &f in fg_sorted {
        if f {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let intersection = gts - cum_fg;
        let union = gts + cum_bg;
        let jaccard = 1.0 - intersection / union;
        out.push(jaccard - prev);
        prev = jaccard;
    }
    out
}

/// Lovász-Softmax over the whole batch, averaged over classes present in
/// the labels.
pub fn lovasz_softmax(probs: &Var, labels: &[u8]) -> Result<Var> {
    let l = seg_layout(probs, labels, true)?;
    let p = probs.value().data();
    let valid: Vec<(usize, usize)> = (0..l.batch)
        .flat_map(|b| (0..l.plane).map(move |i| (b, i)))
        .filter(|&(b, i)| labels[b * l.plane + i] != IGNORE)
        .collect();
    let present: Vec<usize> =
        (0..l.classes).filter(|&c| labels.iter().any(|&y| y as usize == c)).collect();
    if present.is_empty() {
        return Ok(Var::scalar(0.0));
    }
    // error_i = |fg_i − p_i| = p_i·(1 − 2 fg_i) + fg_i for fg ∈ {0, 1}.
    let mut slope = Tensor::zeros(probs.shape());
    let mut offset = 0.0;
    let norm = present.len() as f64;
    for &c in &present {
        let mut entries: Vec<(f64, bool, usize)> = valid
            .iter()
            .map(|&(b, i)| {
                let fg = labels[b * l.plane + i] as usize == c;
                let idx = (b * l.classes + c) * l.plane + i;
                let e = if fg { 1.0 - p[idx] } else { p[idx] };
                (e, fg, idx)
            })
            .collect();
        entries.sort_by(|a, b| b.0.total_cmp(&a.0));
        let fg_sorted: Vec<bool> = entries.iter().map(|e| e.1).collect();
        let weights = lovasz_grad(&fg_sorted);
        let sd = slope.data_mut();
        for ((_, fg, idx), w) in entries.iter().zip(weights) {
            let w = w / norm;
            if *fg {
                sd[*idx] = -w;
                offset += w;
            } else {
                sd[*idx] = w;
            }
        }
    }
    Ok(probs.mul_const(&slope).sum().add_scalar(offset))
}

fn stencil(n: usize, taps: &[f64; 3]) -> Tensor {
    valid_filter_matrix(n, taps)
}

fn check_depth_shape(t: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    if t.len() != 4 || t[1] != 1 {
        return Err(Error::shape(format!("{what} must be [B,1,H,W], got {t:?}")));
    }
    Ok((t[0], t[2], t[3]))
}

/// Edge-aware second-order smoothness: mean over interior pixels of
/// `exp(−|∇²I|) · (|∂xx d| + |∂xy d| + |∂yy d|)`.
pub fn inverse_depth_smoothness(depth: &Var, guide: &Tensor) -> Result<Var> {
    let (_, h, w) = check_depth_shape(depth.shape(), "depth")?;
    if guide.shape() != depth.shape() {
        return Err(Error::shape(format!("guide {:?} vs depth {:?}", guide.shape(), depth.shape())));
    }
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!("smoothness needs at least 3x3 pixels, got {h}x{w}")));
    }
    let dxx = SeparableMap::new(stencil(h, &CENTER), stencil(w, &SECOND_DIFF));
    let dyy = SeparableMap::new(stencil(h, &SECOND_DIFF), stencil(w, &CENTER));
    let dxy = SeparableMap::new(stencil(h, &CENTRAL_DIFF), stencil(w, &CENTRAL_DIFF));
    let laplacian = dxx.apply(guide).add(&dyy.apply(guide));
    let weight = laplacian.map(|v| (-v.abs()).exp());
    let cost = depth.separable_map(&dxx).abs().add(&depth.separable_map(&dxy).abs()).add(&depth.separable_map(&dyy).abs());
    Ok(cost.mul_const(&weight).mean())
}

pub fn mae(pred: &Var, target: &Tensor) -> Result<Var> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    Ok(pred.sub(&Var::constant(target.clone())).abs().mean())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SsimParams {
    pub const DEFAULT_WINDOW: usize = 11;

    /// Constants `(0.01 R)²`, `(0.03 R)²` for dynamic range `R`.
    pub fn for_range(window: usize, range: f64) -> Self {
        Self { window, sigma: 1.5, c1: (0.01 * range).powi(2), c2: (0.03 * range).powi(2) }
    }

    /// Dynamic range taken from the target (1 for a constant target).
    pub fn from_target(window: usize, target: &Tensor) -> Self {
        let (lo, hi) = target.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = if hi > lo { hi - lo } else { 1.0 };
        Self::for_range(window, range)
    }
}

/// Mean local SSIM over all full Gaussian windows of each plane.
pub fn ssim(x: &Var, y: &Var, params: &SsimParams) -> Result<Var> {
    if x.shape() != y.shape() || x.shape().len() != 4 {
        return Err(Error::shape(format!("ssim inputs {:?} vs {:?}", x.shape(), y.shape())));
    }
    let k = params.window;
    if k < 3 || k % 2 == 0 {
        return Err(Error::invalid(format!("ssim window {k} must be odd and at least 3")));
    }
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if h < k || w < k {
        return Err(Error::invalid(format!("{h}x{w} image is smaller than the {k}x{k} window")));
    }
    let g = gaussian_window(k, params.sigma);
    let filt = SeparableMap::new(valid_filter_matrix(h, &g), valid_filter_matrix(w, &g));
    let mu_x = x.separable_map(&filt);
    let mu_y = y.separable_map(&filt);
    let mu_xx = mu_x.square();
    let mu_yy = mu_y.square();
    let mu_xy = mu_x.mul(&mu_y);
    let s_xx = x.square().separable_map(&filt).sub(&mu_xx);
    let s_yy = y.square().separable_map(&filt).sub(&mu_yy);
    let s_xy = x.mul(y).separable_map(&filt).sub(&mu_xy);
    let num = mu_xy.scale(2.0).add_scalar(params.c1).mul(&s_xy.scale(2.0).add_scalar(params.c2));
    let den = mu_xx.add(&mu_yy).add_scalar(params.c1).mul(&s_xx.add(&s_yy).add_scalar(params.c2));
    Ok(num.div(&den).mean())
}

/// `(1 − SSIM) / 2` with constants from the target's dynamic range.
pub fn ssim_loss(pred: &Var, target: &Tensor, window: usize) -> Result<Var> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let params = SsimParams::from_target(window, target);
    let s = ssim(pred, &Var::constant(target.clone()), &params)?;
    Ok(s.neg().add_scalar(1.0).scale(0.5))
}

/// A Wasserstein critic over joint (segment, depth) pairs.
pub trait Critic {
    /// One unsquashed score per batch item, shape `[B]`.
    fn score(&self, seg: &Var, depth: &Var, condition: &Var) -> Result<Var>;
}

fn check_scores(scores: &Var, what: &str) -> Result<()> {
    if let Some(v) = scores.value().data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite { component: what.into(), value: *v });
    }
    Ok(())
}

/// Critic objective with its parts kept apart for reporting.
#[derive(Clone, Debug)]
pub struct CriticLoss {
    pub loss: Var,
    /// `E[D(fake)] − E[D(real)]`.
    pub wasserstein: f64,
    /// `λ · E[(‖∇D(x̂)‖₂ − 1)²]`.
    pub penalty: f64,
}

/// `E[D(fake)] − E[D(real)] + λ·E[(‖∇D(x̂)‖₂ − 1)²]` with one uniform
/// interpolation coefficient per sample drawn from `rng`.
pub fn wgan_gp_d_loss<R: Rng>(
    critic: &dyn Critic,
    real: (&Tensor, &Tensor),
    fake: (&Tensor, &Tensor),
    condition: &Tensor,
    lambda: f64,
    rng: &mut R,
) -> Result<CriticLoss> {
    let batch = real.0.shape().first().copied().unwrap_or(0);
    let eps: Vec<f64> = (0..batch).map(|_| rng.gen::<f64>()).collect();
    wgan_gp_d_loss_with(critic, real, fake, condition, lambda, &eps)
}

/// Same as [`wgan_gp_d_loss`] with explicit interpolation coefficients.
pub fn wgan_gp_d_loss_with(
    critic: &dyn Critic,
    real: (&Tensor, &Tensor),
    fake: (&Tensor, &Tensor),
    condition: &Tensor,
    lambda: f64,
    eps: &[f64],
) -> Result<CriticLoss> {
    if real.0.shape() != fake.0.shape() || real.1.shape() != fake.1.shape() {
        return Err(Error::shape(format!(
            "real pair {:?}/{:?} vs fake pair {:?}/{:?}",
            real.0.shape(),
            real.1.shape(),
            fake.0.shape(),
            fake.1.shape()
        )));
    }
    let batch = real.0.shape()[0];
    if eps.len() != batch {
        return Err(Error::shape(format!("{} interpolation coefficients for batch {batch}", eps.len())));
    }
    let cond = Var::constant(condition.clone());
    let d_real = critic.score(&Var::constant(real.0.clone()), &Var::constant(real.1.clone()), &cond)?;
    let d_fake = critic.score(&Var::constant(fake.0.clone()), &Var::constant(fake.1.clone()), &cond)?;
    check_scores(&d_real, "critic score on real pairs")?;
    check_scores(&d_fake, "critic score on fake pairs")?;

    let mix = |r: &Tensor, f: &Tensor| {
        let per = r.numel() / batch;
        Tensor::from_fn(r.shape(), |i| {
            let e = eps[i / per];
            e * r.data()[i] + (1.0 - e) * f.data()[i]
        })
    };
    let seg_hat = Var::leaf(mix(real.0, fake.0));
    let depth_hat = Var::leaf(mix(real.1, fake.1));
    let d_hat = critic.score(&seg_hat, &depth_hat, &cond)?;
    check_scores(&d_hat, "critic score on interpolates")?;
    let grads = grad(&d_hat.sum(), &[seg_hat.clone(), depth_hat.clone()], true);
    let mut sq = Var::constant(Tensor::zeros(&[batch, 1]));
    for (g, input) in grads.into_iter().zip([&seg_hat, &depth_hat]) {
        if let Some(g) = g {
            let per = input.value().numel() / batch;
            sq = sq.add(&g.square().reshape(&[batch, per]).sum_to(&[batch, 1]));
        }
    }
    let penalty = sq.sqrt().add_scalar(-1.0).square().mean().scale(lambda);
    let wasserstein = d_fake.mean().sub(&d_real.mean());
    let loss = wasserstein.add(&penalty);
    Ok(CriticLoss { wasserstein: wasserstein.item(), penalty: penalty.item(), loss })
}

/// `−E[D(fake)]`.
pub fn wgan_gp_g_loss(critic: &dyn Critic, fake_seg: &Var, fake_depth: &Var, condition: &Tensor) -> Result<Var> {
    let scores = critic.score(fake_seg, fake_depth, &Var::constant(condition.clone()))?;
    check_scores(&scores, "critic score on generated pairs")?;
    Ok(scores.mean().neg())
}

/// Every loss component of one generator/critic update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub wce: f64,
    pub ls: f64,
    pub ids: f64,
    pub mae: f64,
    pub ssim_loss: f64,
    pub d_adv: f64,
    pub g_adv: f64,
    pub seg_total: f64,
    pub depth_total: f64,
    pub grand_total: f64,
}

impl LossReport {
    pub fn from_components(wce: f64, ls: f64, ids: f64, mae: f64, ssim_loss: f64, d_adv: f64, g_adv: f64) -> Self {
        let mut r = Self { wce, ls, ids, mae, ssim_loss, d_adv, g_adv, ..Default::default() };
        r.seg_total = wce + ls;
        r.depth_total = ids + mae + ssim_loss;
        r.grand_total = total_loss(&r);
        r
    }

    /// Named components in reporting order.
    pub fn components(&self) -> [(&'static str, f64); 7] {
        [
            ("wce", self.wce),
            ("ls", self.ls),
            ("ids", self.ids),
            ("mae", self.mae),
            ("ssim", self.ssim_loss),
            ("d_adv", self.d_adv),
            ("g_adv", self.g_adv),
        ]
    }

    /// First component that is not finite.
    pub fn first_non_finite(&self) -> Option<(&'static str, f64)> {
        self.components().into_iter().find(|(_, v)| !v.is_finite())
    }
}

/// Generator objective `L_seg + L_depth + L_adv` with unit weights.
pub fn total_loss(r: &LossReport) -> f64 {
    (r.wce + r.ls) + (r.ids + r.mae + r.ssim_loss) + r.g_adv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_probs(labels: &[u8], classes: usize, h: usize, w: usize) -> Tensor {
        let b = labels.len() / (h * w);
        let plane = h * w;
        Tensor::from_fn(&[b, classes, h, w], |i| {
            let bi = i / (classes * plane);
            let c = (i / plane) % classes;
            let p = i % plane;
            if labels[bi * plane + p] as usize == c {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn wce_perfect_prediction_is_zero() {
        let labels = [0u8, 1, 2, 1];
        let p = Var::constant(one_hot_probs(&labels, 3, 2, 2));
        let f = ClassFrequencies::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(weighted_cross_entropy(&p, &labels, &f).unwrap().item(), 0.0);
    }

    #[test]
    fn wce_single_pixel_hand_value() {
        let p = Var::constant(Tensor::new(vec![1, 2, 1, 1], vec![0.5, 0.5]));
        let f = ClassFrequencies::new(vec![0.75, 0.25]).unwrap();
        let v = weighted_cross_entropy(&p, &[1], &f).unwrap().item();
        assert!((v - 1.3862944).abs() < 1e-7, "{v}");
    }

    #[test]
    fn wce_uniform_frequency_scales_cross_entropy() {
        let probs = Tensor::new(vec![1, 3, 1, 2], vec![0.2, 0.5, 0.3, 0.25, 0.5, 0.25]);
        let labels = [0u8, 2];
        let ce = -(0.2f64.ln() + 0.25f64.ln()) / 2.0;
        let v = weighted_cross_entropy(&Var::constant(probs), &labels, &ClassFrequencies::uniform(3)).unwrap().item();
        assert!((v - ce * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wce_rejects_bad_labels_and_mass() {
        let p = Var::constant(Tensor::new(vec![1, 2, 1, 1], vec![0.5, 0.5]));
        let f = ClassFrequencies::uniform(2);
        assert!(matches!(weighted_cross_entropy(&p, &[2], &f), Err(Error::InvalidInput(_))));
        let q = Var::constant(Tensor::new(vec![1, 2, 1, 1], vec![0.5, 0.6]));
        assert!(weighted_cross_entropy(&q, &[0], &f).is_err());
    }

    #[test]
    fn lovasz_examples() {
        let labels = [0u8, 1, 2, 1];
        let p = Var::constant(one_hot_probs(&labels, 3, 2, 2));
        assert_eq!(lovasz_softmax(&p, &labels).unwrap().item(), 0.0);
        // labels [A, B], prediction [B, A]
        let pred = one_hot_probs(&[1, 0], 2, 1, 2);
        let v = lovasz_softmax(&Var::constant(pred), &[0, 1]).unwrap().item();
        assert!((v - 1.0).abs() < 1e-12);
        let all_ignored = Var::constant(Tensor::full(&[1, 2, 1, 2], 0.5));
        assert_eq!(lovasz_softmax(&all_ignored, &[IGNORE, IGNORE]).unwrap().item(), 0.0);
    }

    #[test]
    fn smoothness_examples() {
        let (h, w) = (5, 6);
        let flat = Tensor::zeros(&[1, 1, h, w]);
        let constant = Var::constant(Tensor::full(&[1, 1, h, w], 3.0));
        assert_eq!(inverse_depth_smoothness(&constant, &flat).unwrap().item(), 0.0);
        let quad_u = Var::constant(Tensor::from_fn(&[1, 1, h, w], |i| ((i % w) as f64).powi(2)));
        assert!((inverse_depth_smoothness(&quad_u, &flat).unwrap().item() - 2.0).abs() < 1e-12);
        let quad_v = Var::constant(Tensor::from_fn(&[1, 1, h, w], |i| ((i / w) as f64).powi(2)));
        assert!((inverse_depth_smoothness(&quad_v, &flat).unwrap().item() - 2.0).abs() < 1e-12);
        let small = Var::constant(Tensor::zeros(&[1, 1, 2, 5]));
        assert!(inverse_depth_smoothness(&small, &Tensor::zeros(&[1, 1, 2, 5])).is_err());
    }

    #[test]
    fn smoothness_weight_decreases_at_edges() {
        let (h, w) = (3, 3);
        let depth = Var::constant(Tensor::from_fn(&[1, 1, h, w], |i| ((i % w) as f64).powi(2)));
        let mut last = f64::INFINITY;
        for edge in [0.0, 0.5, 1.0, 4.0] {
            let guide = Tensor::from_fn(&[1, 1, h, w], |i| if i == 4 { edge } else { 0.0 });
            let v = inverse_depth_smoothness(&depth, &guide).unwrap().item();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn mae_examples() {
        let t = Tensor::from_fn(&[1, 1, 2, 4], |i| (i % 2) as f64);
        assert_eq!(mae(&Var::constant(t.clone()), &t).unwrap().item(), 0.0);
        assert!((mae(&Var::constant(t.map(|v| v + 1.0)), &t).unwrap().item() - 1.0).abs() < 1e-15);
        let flipped = Tensor::from_fn(&[1, 1, 2, 4], |i| if i < 3 { 1.0 - (i % 2) as f64 } else { (i % 2) as f64 });
        assert!((mae(&Var::constant(flipped), &t).unwrap().item() - 3.0 / 8.0).abs() < 1e-15);
        assert!(mae(&Var::constant(Tensor::zeros(&[1, 1, 2, 2])), &t).is_err());
    }

    #[test]
    fn ssim_examples() {
        let x = Tensor::from_fn(&[1, 1, 12, 12], |i| ((i * 37) % 17) as f64 / 17.0);
        let p = SsimParams::for_range(11, 1.0);
        let s = ssim(&Var::constant(x.clone()), &Var::constant(x.clone()), &p).unwrap().item();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(ssim_loss(&Var::constant(x.clone()), &x, 11).unwrap().item().abs() < 1e-12);
        let (a, b) = (0.3, 0.7);
        let s = ssim(
            &Var::constant(Tensor::full(&[1, 1, 12, 12], a)),
            &Var::constant(Tensor::full(&[1, 1, 12, 12], b)),
            &p,
        )
        .unwrap()
        .item();
        let expect = (2.0 * a * b + p.c1) / (a * a + b * b + p.c1);
        assert!((s - expect).abs() < 1e-12);
        let y = Tensor::from_fn(&[1, 1, 12, 12], |i| ((i * 11) % 13) as f64 / 13.0);
        let sxy = ssim(&Var::constant(x.clone()), &Var::constant(y.clone()), &p).unwrap().item();
        let syx = ssim(&Var::constant(y), &Var::constant(x), &p).unwrap().item();
        assert!((sxy - syx).abs() < 1e-12);
        assert!(ssim(&Var::constant(Tensor::zeros(&[1, 1, 8, 8])), &Var::constant(Tensor::zeros(&[1, 1, 8, 8])), &p).is_err());
    }

    struct ConstCritic(f64);
    impl Critic for ConstCritic {
        fn score(&self, seg: &Var, _d: &Var, _c: &Var) -> Result<Var> {
            Ok(Var::constant(Tensor::full(&[seg.shape()[0]], self.0)))
        }
    }

    #[test]
    fn constant_critic_losses() {
        let real = (Tensor::zeros(&[2, 2, 3, 3]), Tensor::zeros(&[2, 1, 3, 3]));
        let fake = (Tensor::ones(&[2, 2, 3, 3]), Tensor::ones(&[2, 1, 3, 3]));
        let cond = Tensor::zeros(&[2, 2, 3, 3]);
        let l = wgan_gp_d_loss_with(&ConstCritic(4.0), (&real.0, &real.1), (&fake.0, &fake.1), &cond, 10.0, &[0.3, 0.9]).unwrap();
        assert_eq!(l.loss.item(), 10.0);
        assert_eq!(l.penalty, 10.0);
        let g = wgan_gp_g_loss(&ConstCritic(4.0), &Var::constant(fake.0), &Var::constant(fake.1), &cond).unwrap();
        assert_eq!(g.item(), -4.0);
    }

    #[test]
    fn report_totals() {
        let r = LossReport::from_components(1.0, 2.0, 3.0, 4.0, 5.0, 0.5, 6.0);
        assert_eq!(r.seg_total, 3.0);
        assert_eq!(r.depth_total, 12.0);
        assert_eq!(r.grand_total, 21.0);
        assert_eq!(total_loss(&LossReport::default()), 0.0);
        let n = LossReport::from_components(1.0, f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(n.first_non_finite().unwrap().0, "ls");
    }
}
