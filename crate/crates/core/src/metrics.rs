//! Segment, image-distribution and depth evaluation metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthMap, SegmentMap, IGNORE};

/// Rows are ground-truth classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every pixel pair of one map; pixels with an ignored ground truth
    /// are skipped.
    pub fn accumulate(&mut self, pred: &SegmentMap, gt: &SegmentMap) -> Result<()> {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::shape(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width, pred.height, gt.width, gt.height
            )));
        }
        let c = self.classes;
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == IGNORE {
                continue;
            }
            if g as usize >= c || p as usize >= c {
                return Err(Error::invalid(format!("label pair ({g}, {p}) out of range for {c} classes")));
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

pub fn confusion(pred: &SegmentMap, gt: &SegmentMap, classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

pub fn iou(cm: &ConfusionMatrix) -> IouReport {
    let c = cm.classes;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let fn_: u64 = (0..c).map(|p| cm.get(k, p)).sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|g| cm.get(g, k)).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    IouReport { per_class, miou }
}

/// Multi-channel square image, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }
}

pub const SWD_RESOLUTION: usize = 1024;
pub const PYRAMID_MIN: usize = 16;
const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    r.clamp(0, n - 1) as usize
}

/// Bilinear resize of a `w × h` plane (row-major) to `ow × oh`.
pub fn resize_plane(src: &[f64], w: usize, h: usize, ow: usize, oh: usize) -> Vec<f64> {
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(inp - 1);
                (i0, (i0 + 1).min(inp - 1), s - i0 as f64)
            })
            .collect()
    };
    let (tx, ty) = (taps(ow, w), taps(oh, h));
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for (x, &(a, b, t)) in tx.iter().enumerate() {
            rows[y * ow + x] = src[y * w + a] * (1.0 - t) + src[y * w + b] * t;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for (y, &(a, b, t)) in ty.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = rows[a * ow + x] * (1.0 - t) + rows[b * ow + x] * t;
        }
    }
    out
}

fn blur_down(src: &[f64], n: usize) -> Vec<f64> {
    let m = n / 2;
    let mut tmp = vec![0.0; m * n];
    for y in 0..n {
        for x in 0..m {
            tmp[y * m + x] = (0..5).map(|k| BINOMIAL[k] * src[y * n + reflect(2 * x as isize + k as isize - 2, n)]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for y in 0..m {
        for x in 0..m {
            out[y * m + x] = (0..5).map(|k| BINOMIAL[k] * tmp[reflect(2 * y as isize + k as isize - 2, n) * m + x]).sum();
        }
    }
    out
}

/// Doubles resolution by zero insertion and a gain-2 binomial blur per axis.
fn upsample(src: &[f64], m: usize) -> Vec<f64> {
    let n = 2 * m;
    let tap = |i: usize, k: usize| -> Option<usize> {
        let j = i as isize + k as isize - 2;
        let r = reflect(j, n);
        (r % 2 == 0).then_some(r / 2)
    };
    let mut tmp = vec![0.0; m * n];
    for y in 0..m {
        for x in 0..n {
            tmp[y * n + x] = (0..5).filter_map(|k| tap(x, k).map(|s| 2.0 * BINOMIAL[k] * src[y * m + s])).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = (0..5).filter_map(|k| tap(y, k).map(|s| 2.0 * BINOMIAL[k] * tmp[s * n + x])).sum();
        }
    }
    out
}

/// Laplacian pyramid of a square power-of-two image, finest level first.
/// The last level is the low-pass residual at `min_res`.
pub fn laplacian_pyramid(img: &Planes, min_res: usize) -> Result<Vec<Planes>> {
    let n = img.size;
    if !n.is_power_of_two() || !min_res.is_power_of_two() || n < min_res || min_res < 4 {
        return Err(Error::invalid(format!(
            "pyramid needs a square power-of-two image of at least {min_res}, got {n}"
        )));
    }
    if img.data.len() != img.channels * n * n {
        return Err(Error::shape(format!("{} values for {} channels of {n}x{n}", img.data.len(), img.channels)));
    }
    let mut levels = Vec::new();
    let mut current = img.clone();
    while current.size > min_res {
        let (s, half) = (current.size, current.size / 2);
        let mut low = Vec::with_capacity(current.channels * half * half);
        let mut diff = Vec::with_capacity(current.data.len());
        for c in 0..current.channels {
            let plane = current.plane(c);
            let down = blur_down(plane, s);
            let up = upsample(&down, half);
            diff.extend(plane.iter().zip(&up).map(|(a, b)| a - b));
            low.extend(down);
        }
        levels.push(Planes { channels: current.channels, size: s, data: diff });
        current = Planes { channels: current.channels, size: half, data: low };
    }
    levels.push(current);
    Ok(levels)
}

/// Inverse of [`laplacian_pyramid`].
pub fn reconstruct_pyramid(levels: &[Planes]) -> Planes {
    let mut acc = levels.last().expect("nonempty pyramid").clone();
    for level in levels[..levels.len() - 1].iter().rev() {
        let mut data = Vec::with_capacity(level.data.len());
        for c in 0..level.channels {
            let up = upsample(acc.plane(c), acc.size);
            data.extend(up.iter().zip(level.plane(c)).map(|(a, b)| a + b));
        }
        acc = Planes { channels: level.channels, size: level.size, data };
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwdConfig {
    pub resolution: usize,
    pub min_res: usize,
    pub patch: usize,
    pub patches_per_level: usize,
    pub num_projections: usize,
    pub seed: u64,
}

impl Default for SwdConfig {
    fn default() -> Self {
        Self { resolution: SWD_RESOLUTION, min_res: PYRAMID_MIN, patch: 7, patches_per_level: 128, num_projections: 512, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwdReport {
    /// Per level, finest first, scaled by 10³.
    pub per_level: Vec<f64>,
    pub average: f64,
    /// Some level had fewer patch positions than requested.
    pub resampled: bool,
}

/// An image of `channels` planes of `width × height`, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlanes {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// `count` unit vectors of dimension `dim`.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn quantiles(sorted: &[f64], n: usize) -> Vec<f64> {
    if sorted.len() == n {
        return sorted.to_vec();
    }
    (0..n).map(|i| sorted[((i as f64 + 0.5) / n as f64 * sorted.len() as f64) as usize]).collect()
}

/// Mean over `directions` of the 1D Wasserstein-1 distance between the
/// projected sets. Unequal set sizes are compared through quantiles.
pub fn sliced_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], directions: &[Vec<f64>]) -> f64 {
    let n = a.len().max(b.len());
    let mut total = 0.0;
    for u in directions {
        let project = |set: &[Vec<f64>]| {
            let mut p: Vec<f64> = set.iter().map(|x| x.iter().zip(u).map(|(xi, ui)| xi * ui).sum()).collect();
            p.sort_by(f64::total_cmp);
            quantiles(&p, n)
        };
        let (pa, pb) = (project(a), project(b));
        total += pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    }
    total / directions.len() as f64
}

fn to_square(img: &ImagePlanes, size: usize) -> Planes {
    let mut data = Vec::with_capacity(img.channels * size * size);
    let n = img.width * img.height;
    for c in 0..img.channels {
        data.extend(resize_plane(&img.data[c * n..(c + 1) * n], img.width, img.height, size, size));
    }
    Planes { channels: img.channels, size, data }
}

fn normalize_per_channel(desc: &mut [Vec<f64>], channels: usize) {
    if desc.is_empty() {
        return;
    }
    let per = desc[0].len() / channels;
    for c in 0..channels {
        let range = c * per..(c + 1) * per;
        let vals = desc.iter().flat_map(|d| d[range.clone()].iter().copied());
        let count = (desc.len() * per) as f64;
        let mean = vals.clone().sum::<f64>() / count;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        let std = var.sqrt();
        let std = if std > 1e-12 { std } else { 1.0 };
        for d in desc.iter_mut() {
            for v in &mut d[range.clone()] {
                *v = (*v - mean) / std;
            }
        }
    }
}

fn sample_patches(level: &Planes, patch: usize, count: usize, rng: &mut ChaCha8Rng, out: &mut Vec<Vec<f64>>) -> bool {
    let side = level.size.saturating_sub(patch) + 1;
    let positions = side * side;
    let picks: Vec<usize> = if positions >= count {
        index::sample(rng, positions, count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..positions)).collect()
    };
    let patch = patch.min(level.size);
    for pos in picks {
        let (y0, x0) = (pos / side, pos % side);
        let mut d = Vec::with_capacity(level.channels * patch * patch);
        for c in 0..level.channels {
            let plane = level.plane(c);
            for y in y0..y0 + patch {
                d.extend_from_slice(&plane[y * level.size + x0..y * level.size + x0 + patch]);
            }
        }
        out.push(d);
    }
    positions < count
}

/// Laplacian-pyramid sliced Wasserstein distance between two image sets.
pub fn swd(real: &[ImagePlanes], fake: &[ImagePlanes], cfg: &SwdConfig) -> Result<SwdReport> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid("sliced Wasserstein distance needs nonempty image sets"));
    }
    let channels = real[0].channels;
    if real.iter().chain(fake).any(|i| i.channels != channels || i.data.len() != i.channels * i.width * i.height) {
        return Err(Error::shape("images must share a channel count and match their declared size"));
    }
    let mut resampled = false;
    // Both sets replay one patch-position stream, so identical sets score 0.
    let mut collect = |set: &[ImagePlanes]| -> Result<Vec<Vec<Vec<f64>>>> {
        let rng = &mut ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut per_level: Vec<Vec<Vec<f64>>> = Vec::new();
        for img in set {
            let levels = laplacian_pyramid(&to_square(img, cfg.resolution), cfg.min_res)?;
            per_level.resize(levels.len(), Vec::new());
            for (l, level) in levels.iter().enumerate() {
                resampled |= sample_patches(level, cfg.patch, cfg.patches_per_level, rng, &mut per_level[l]);
            }
        }
        Ok(per_level)
    };
    let mut a = collect(real)?;
    let mut b = collect(fake)?;
    let dim = a[0][0].len();
    let dirs = random_directions(dim, cfg.num_projections, cfg.seed ^ 0x5EED);
    let per_level: Vec<f64> = a
        .iter_mut()
        .zip(b.iter_mut())
        .map(|(da, db)| {
            normalize_per_channel(da, channels);
            normalize_per_channel(db, channels);
            1e3 * sliced_wasserstein(da, db, &dirs)
        })
        .collect();
    let average = per_level.iter().sum::<f64>() / per_level.len() as f64;
    Ok(SwdReport { per_level, average, resampled })
}

/// Maps an image to a feature vector.
pub trait Embedding {
    fn embed(&self, img: &ImagePlanes) -> Vec<f64>;
}

/// The raw pixels.
pub struct IdentityEmbedding;

impl Embedding for IdentityEmbedding {
    fn embed(&self, img: &ImagePlanes) -> Vec<f64> {
        img.data.clone()
    }
}

/// Fixed random linear map of the pixels to `dim` features.
pub struct RandomProjection {
    dim: usize,
    seed: u64,
}

impl RandomProjection {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl Embedding for RandomProjection {
    fn embed(&self, img: &ImagePlanes) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let scale = 1.0 / (img.data.len() as f64).sqrt();
        let mut out = vec![0.0; self.dim];
        for &x in &img.data {
            for o in out.iter_mut() {
                let w: f64 = rng.sample(StandardNormal);
                *o += w * scale * x;
            }
        }
        out
    }
}

const FRECHET_JITTER: f64 = 1e-6;

fn mean_cov(feats: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (feats.len(), feats[0].len());
    let mut mu = DVector::zeros(d);
    for f in feats {
        mu += DVector::from_column_slice(f);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in feats {
        let x = DVector::from_column_slice(f) - &mu;
        cov.ger(1.0, &x, &x, 1.0);
    }
    cov /= (n - 1) as f64;
    (mu, cov)
}

fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    if let Some(v) = eig.eigenvalues.iter().find(|&&v| v < -1e-8 * scale) {
        return Err(Error::Numeric(format!("covariance has eigenvalue {v:e} after jitter")));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μ₁ − μ₂‖² + tr(Σ₁ + Σ₂ − 2 (Σ₁ Σ₂)^{1/2})` of Gaussian fits.
pub fn frechet_distance(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    if real.len() < 2 || fake.len() < 2 {
        return Err(Error::invalid("Fréchet distance needs at least two vectors per set"));
    }
    let d = real[0].len();
    if d == 0 || real.iter().chain(fake).any(|v| v.len() != d) {
        return Err(Error::shape("feature vectors must share a nonzero dimension"));
    }
    let (mu1, s1) = mean_cov(real);
    let (mu2, s2) = mean_cov(fake);
    let jitter = DMatrix::<f64>::identity(d, d) * FRECHET_JITTER;
    let r1 = sqrt_psd(&(&s1 + &jitter))?;
    let inner = &r1 * (&s2 + &jitter) * &r1;
    let cross = sqrt_psd(&((&inner + inner.transpose()) * 0.5))?;
    let diff = &mu1 - &mu2;
    let value = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * (cross.trace() - d as f64 * FRECHET_JITTER);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("Fréchet distance evaluated to {value}")));
    }
    Ok(value.max(0.0))
}

/// Fréchet distance between two image sets under an embedding.
pub fn frechet_images(real: &[ImagePlanes], fake: &[ImagePlanes], emb: &dyn Embedding) -> Result<f64> {
    let e = |set: &[ImagePlanes]| set.iter().map(|i| emb.embed(i)).collect::<Vec<_>>();
    frechet_distance(&e(real), &e(fake))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub rms_log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// Predictions are floored here before ratios and logarithms.
pub const DEPTH_FLOOR: f64 = 1e-6;
pub const DELTA_BASE: f64 = 1.25;

/// Running sums so metrics can be pooled over many maps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthAccumulator {
    n: u64,
    abs_rel: f64,
    sq_rel: f64,
    sq: f64,
    sq_log: f64,
    within: [u64; 3],
}

impl DepthAccumulator {
    pub fn add(&mut self, pred: f64, gt: f64) {
        let p = pred.max(DEPTH_FLOOR);
        let e = pred - gt;
        self.n += 1;
        self.abs_rel += e.abs() / gt;
        self.sq_rel += e * e / gt;
        self.sq += e * e;
        self.sq_log += (p.log10() - gt.log10()).powi(2);
        let ratio = (p / gt).max(gt / p);
        for (k, w) in self.within.iter_mut().enumerate() {
            if ratio < DELTA_BASE.powi(k as i32 + 1) {
                *w += 1;
            }
        }
    }

    pub fn add_maps(&mut self, pred: &DepthMap, gt: &DepthMap, mask: Option<&[bool]>) -> Result<()> {
        if pred.values.len() != gt.values.len() {
            return Err(Error::shape(format!("{} predicted depths vs {} ground truth", pred.values.len(), gt.values.len())));
        }
        if let Some(m) = mask {
            if m.len() != gt.values.len() {
                return Err(Error::shape("mask size differs from the depth map"));
            }
        }
        for (i, (&p, &g)) in pred.values.iter().zip(&gt.values).enumerate() {
            if mask.map_or(true, |m| m[i]) {
                if !(g > 0.0) {
                    return Err(Error::invalid(format!("ground-truth depth {g} at pixel {i} is not positive")));
                }
                self.add(p, g);
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<DepthMetrics> {
        if self.n == 0 {
            return Err(Error::Undefined("depth metrics over an empty mask".into()));
        }
        let n = self.n as f64;
        Ok(DepthMetrics {
            abs_rel: self.abs_rel / n,
            sq_rel: self.sq_rel / n,
            rms: (self.sq / n).sqrt(),
            rms_log10: (self.sq_log / n).sqrt(),
            delta1: self.within[0] as f64 / n,
            delta2: self.within[1] as f64 / n,
            delta3: self.within[2] as f64 / n,
        })
    }
}

/// Evaluates masked pixels; `None` evaluates wherever the ground truth is positive.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, mask: Option<&[bool]>) -> Result<DepthMetrics> {
    let mut acc = DepthAccumulator::default();
    match mask {
        Some(m) => acc.add_maps(pred, gt, Some(m))?,
        None => {
            let m: Vec<bool> = gt.values.iter().map(|&g| g > 0.0).collect();
            acc.add_maps(pred, gt, Some(&m))?
        }
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(labels: &[u8]) -> SegmentMap {
        SegmentMap::new(labels.len(), 1, labels.to_vec()).unwrap()
    }

    #[test]
    fn confusion_and_iou_hand_example() {
        let cm = confusion(&seg(&[0, 1, 1, 1]), &seg(&[0, 0, 1, 1]), 2).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 1, 0, 2));
        assert_eq!(cm.total(), 4);
        let r = iou(&cm);
        assert_eq!(r.per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
        let perfect = iou(&confusion(&seg(&[0, 2]), &seg(&[0, 2]), 3).unwrap());
        assert_eq!(perfect.per_class, vec![Some(1.0), None, Some(1.0)]);
        assert_eq!(perfect.miou, 1.0);
        assert!(confusion(&seg(&[0]), &seg(&[0, 1]), 2).is_err());
    }

    fn planes(size: usize, f: impl Fn(usize, usize) -> f64) -> Planes {
        Planes { channels: 1, size, data: (0..size * size).map(|i| f(i % size, i / size)).collect() }
    }

    #[test]
    fn pyramid_levels_and_reconstruction() {
        let img = planes(64, |x, y| ((x * 13 + y * 7) % 10) as f64 / 10.0 + (x as f64 * 0.1).sin());
        let levels = laplacian_pyramid(&img, 16).unwrap();
        assert_eq!(levels.iter().map(|l| l.size).collect::<Vec<_>>(), vec![64, 32, 16]);
        let back = reconstruct_pyramid(&levels);
        let err = back.data.iter().zip(&img.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12);
        let flat = laplacian_pyramid(&planes(32, |_, _| 0.7), 16).unwrap();
        assert!(flat[0].data.iter().all(|v| v.abs() < 1e-12));
        assert!(laplacian_pyramid(&planes(24, |_, _| 0.0), 16).is_err());
    }

    #[test]
    fn singleton_sliced_wasserstein() {
        let dirs = random_directions(3, 64, 1);
        let (a, b) = (vec![1.0, 2.0, -1.0], vec![0.5, -1.0, 2.0]);
        let direct = dirs.iter().map(|u| u.iter().zip(a.iter().zip(&b)).map(|(ui, (x, y))| ui * (x - y)).sum::<f64>().abs()).sum::<f64>() / 64.0;
        assert!((sliced_wasserstein(&[a.clone()], &[b], &dirs) - direct).abs() < 1e-12);
        assert_eq!(sliced_wasserstein(&[a.clone(), vec![0.0; 3]], &[vec![0.0; 3], a], &dirs), 0.0);
    }

    #[test]
    fn depth_hand_values() {
        let gt = DepthMap::new(3, 1, vec![1.0, 4.0, 10.0]).unwrap();
        let scaled = |k: f64| DepthMap::new(3, 1, gt.values.iter().map(|v| v * k).collect()).unwrap();
        let same = depth_metrics(&gt, &gt, None).unwrap();
        assert_eq!((same.abs_rel, same.rms, same.delta1, same.delta3), (0.0, 0.0, 1.0, 1.0));
        let double = depth_metrics(&scaled(2.0), &gt, None).unwrap();
        assert_eq!((double.abs_rel, double.delta1, double.delta2, double.delta3), (1.0, 0.0, 0.0, 0.0));
        let near = depth_metrics(&scaled(1.2), &gt, None).unwrap();
        assert_eq!(near.delta1, 1.0);
        assert!((near.abs_rel - 0.2).abs() < 1e-12);
        let none = depth_metrics(&gt, &gt, Some(&[false; 3]));
        assert!(matches!(none, Err(Error::Undefined(_))));
    }

    #[test]
    fn frechet_identical_and_symmetric() {
        let a: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 * 0.01]).collect();
        let b: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).cos(), 0.5 + (i as f64 * 0.7).sin(), 0.2]).collect();
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-6);
        let (x, y) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        assert!((x - y).abs() < 1e-9 * x.max(1.0));
        assert!(frechet_distance(&a[..1], &b).is_err());
    }
}
