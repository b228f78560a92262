//! Adversarial training: data preparation, augmentation, the alternating
//! critic/generator update, resumable state and the epoch loop.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_values, no_grad, Var};
use crate::checkpoint::{self, DType};
use crate::error::{Error, Result};
use crate::filters::Resample;
use crate::image::{DepthMap, SegmentMap};
use crate::losses::{
    inverse_depth_smoothness, lovasz_softmax, mae, ssim_loss, weighted_cross_entropy, wgan_gp_d_loss, wgan_gp_g_loss,
    ClassFrequencies, LossReport, SsimParams,
};
use crate::metrics::{iou, swd, ConfusionMatrix, DepthAccumulator, ImagePlanes, SwdConfig};
use crate::network::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::nn::{resize_tensor, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::projection::{azimuth_columns, drop_mask, flip_cloud, spherical_project, PointCloud, ProjectionConfig};
use crate::synthdata::{paint_segments, PairedSample, SensorRig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub gp_lambda: f64,
    pub flip_prob: f64,
    pub drop_prob: f64,
    /// Fraction of points removed when a drop is applied.
    pub drop_fraction: f64,
    pub critic_steps_per_gen: usize,
    pub max_epochs: usize,
    /// Stops early once this many generator updates have run.
    pub max_steps: Option<u64>,
    pub seed: u64,
    /// Validation row cadence in epochs; 0 disables periodic validation.
    pub val_every: usize,
    /// Generator checkpoint cadence in epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Meters mapped to 1 in the coordinate and range input channels.
    pub max_range: f64,
    pub ssim_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 6,
            gp_lambda: 10.0,
            flip_prob: 0.5,
            drop_prob: 0.5,
            drop_fraction: 0.1,
            critic_steps_per_gen: 5,
            max_epochs: 60,
            max_steps: None,
            seed: 0,
            val_every: 1,
            checkpoint_every: 1,
            max_range: 50.0,
            ssim_window: SsimParams::DEFAULT_WINDOW,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} {p} outside [0, 1]")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("drop_prob", self.drop_prob)?;
        prob("drop_fraction", self.drop_fraction)?;
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("learning_rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.max_range > 0.0) || !(self.gp_lambda >= 0.0) {
            return Err(Error::config("max_range must be positive and gp_lambda non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, ..Default::default() }
    }
}

/// Geometry shared by every prepared sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    /// Full LiDAR projection before cropping.
    pub projection: ProjectionConfig,
    /// Columns `[start, end)` of the camera field of view.
    pub crop: (usize, usize),
    pub num_classes: usize,
    pub max_range: f64,
    /// `(width, height)` of the camera targets.
    pub output_size: (usize, usize),
}

impl DataSpec {
    pub fn new(rig: &SensorRig, gen: &GeneratorConfig, max_range: f64) -> Result<Self> {
        let projection = rig.lidar.grid();
        projection.validate()?;
        let crop = azimuth_columns(projection.width, rig.camera.azimuth_window())?;
        let spec = Self {
            projection,
            crop,
            num_classes: gen.num_classes,
            max_range,
            output_size: (rig.camera.width, rig.camera.height),
        };
        if (crop.1 - crop.0, spec.projection.height) != gen.input_size {
            return Err(Error::config(format!(
                "camera crop gives a {}x{} range image but the generator expects {:?}",
                crop.1 - crop.0,
                spec.projection.height,
                gen.input_size
            )));
        }
        if spec.output_size != gen.output_size {
            return Err(Error::config(format!(
                "camera is {:?} but the generator outputs {:?}",
                spec.output_size, gen.output_size
            )));
        }
        Ok(spec)
    }
}

/// Network-ready tensors of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    /// `[5 + C, h′, w′]`.
    pub input: Tensor,
    /// One-hot LiDAR segments resampled to the output size, `[C, h, w]`.
    pub condition: Tensor,
    /// Camera labels, row-major.
    pub labels: Vec<u8>,
    /// `[C, h, w]` one-hot of `labels`.
    pub seg_onehot: Tensor,
    /// Depth scaled to `[0, 1]` by the sample's own range, `[1, h, w]`.
    pub depth: Tensor,
    /// `(min, max)` camera depth used for the scaling.
    pub depth_range: (f64, f64),
    /// Luminance of the painted ground-truth segments, `[1, h, w]`.
    pub guide: Tensor,
}

/// Range image and LiDAR segment planes of a cloud in the camera crop.
pub fn lidar_input(cloud: &PointCloud, labels: &[u16], spec: &DataSpec) -> Result<Tensor> {
    let full = spherical_project(cloud, &spec.projection)?;
    let img = full.columns(spec.crop.0, spec.crop.1 - spec.crop.0);
    let range = img.to_tensor(spec.max_range);
    let c = spec.num_classes;
    let n = img.width * img.height;
    let mut seg = Tensor::zeros(&[c, img.height, img.width]);
    for (i, l) in img.labels_from(labels).into_iter().enumerate() {
        if let Some(l) = l {
            if (l as usize) < c {
                seg.data_mut()[l as usize * n + i] = 1.0;
            }
        }
    }
    Ok(Tensor::concat(&[&range, &seg], 0))
}

pub fn prepare(sample: &PairedSample, spec: &DataSpec, palette: &[[u8; 3]]) -> Result<Prepared> {
    let (w, h) = spec.output_size;
    let seg = &sample.cam_segments;
    if (seg.width, seg.height) != (w, h) || (sample.cam_depth.width, sample.cam_depth.height) != (w, h) {
        return Err(Error::shape(format!("camera targets are not {w}x{h}")));
    }
    if sample.lidar_labels.len() != sample.cloud.len() {
        return Err(Error::invalid("LiDAR label count differs from the point count"));
    }
    let input = lidar_input(&sample.cloud, &sample.lidar_labels, spec)?;
    let c = spec.num_classes;
    let lidar_seg = input.narrow(0, crate::projection::CHANNELS, c);
    let ls = lidar_seg.shape().to_vec();
    let condition = resize_tensor(&lidar_seg.reshape(&[1, c, ls[1], ls[2]]), (h, w), Resample::Nearest).reshape(&[c, h, w]);
    let (lo, hi) = sample.cam_depth.positive_range().unwrap_or((0.0, 1.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let depth = Tensor::from_fn(&[1, h, w], |i| {
        let d = sample.cam_depth.values[i];
        if d > 0.0 {
            (d - lo) / span
        } else {
            0.0
        }
    });
    let painted = paint_segments(seg, palette)?;
    let guide = Tensor::new(vec![1, h, w], painted.luminance());
    Ok(Prepared {
        input,
        condition,
        labels: seg.labels.clone(),
        seg_onehot: seg.one_hot(c),
        depth,
        depth_range: (lo, lo + span),
        guide,
    })
}

/// Which augmentations one call applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Applied {
    pub flipped: bool,
    pub dropped: bool,
}

/// Random mirror and point dropout of a paired sample, drawn from `rng`.
pub fn augment<R: Rng>(sample: &PairedSample, cfg: &TrainConfig, rng: &mut R) -> Result<(PairedSample, Applied)> {
    let mut out = sample.clone();
    let mut applied = Applied::default();
    if rng.gen::<f64>() < cfg.flip_prob {
        applied.flipped = true;
        out.cloud = flip_cloud(&out.cloud);
        out.cam_segments = out.cam_segments.mirrored();
        out.cam_depth = out.cam_depth.mirrored();
        out.cam_rgb = out.cam_rgb.map(|img| {
            let pixels = img.pixels.chunks(img.width).flat_map(|r| r.iter().rev().copied()).collect();
            crate::image::RgbImage { pixels, ..img }
        });
    }
    if rng.gen::<f64>() < cfg.drop_prob {
        applied.dropped = true;
        let keep = drop_mask(out.cloud.len(), cfg.drop_fraction, rng)?;
        let mut it = keep.iter();
        out.cloud.points.retain(|_| *it.next().expect("mask length"));
        let mut it = keep.iter();
        out.lidar_labels.retain(|_| *it.next().expect("mask length"));
    }
    Ok((out, applied))
}

/// Serializable position of a [`ChaCha8Rng`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |m: &str| Error::invalid(format!("rng state: {m}"));
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad("seed is not hex"))?
            .try_into()
            .map_err(|_| bad("seed must be 32 bytes"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word position is not an integer"))?);
        Ok(rng)
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub generator: ParamStore,
    pub critic: ParamStore,
    pub gen_opt: Adam,
    pub critic_opt: Adam,
    /// Generator updates so far.
    pub step: u64,
    pub critic_updates: u64,
    pub epoch: usize,
    /// Next batch within the current epoch.
    pub batch_index: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    step: u64,
    critic_updates: u64,
    epoch: usize,
    batch_index: usize,
    gen_opt_steps: u64,
    critic_opt_steps: u64,
    rng: RngState,
}

const STATE_KIND: &str = "train_state";

impl TrainState {
    pub fn new(generator: ParamStore, critic: ParamStore, seed: u64) -> Self {
        Self {
            gen_opt: Adam::new(&generator),
            critic_opt: Adam::new(&critic),
            generator,
            critic,
            step: 0,
            critic_updates: 0,
            epoch: 0,
            batch_index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = StateHeader {
            step: self.step,
            critic_updates: self.critic_updates,
            epoch: self.epoch,
            batch_index: self.batch_index,
            gen_opt_steps: self.gen_opt.steps,
            critic_opt_steps: self.critic_opt.steps,
            rng: RngState::capture(&self.rng),
        };
        let mut names = Vec::new();
        let groups: [(&str, &ParamStore, &[Tensor]); 6] = [
            ("g", &self.generator, self.generator.values()),
            ("g_m", &self.generator, &self.gen_opt.m),
            ("g_v", &self.generator, &self.gen_opt.v),
            ("d", &self.critic, self.critic.values()),
            ("d_m", &self.critic, &self.critic_opt.m),
            ("d_v", &self.critic, &self.critic_opt.v),
        ];
        for (prefix, store, values) in &groups {
            for (name, t) in store.names().iter().zip(values.iter()) {
                names.push((format!("{prefix}/{name}"), t));
            }
        }
        let refs: Vec<(&str, &Tensor)> = names.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        checkpoint::encode(STATE_KIND, &serde_json::to_value(header).expect("header"), &refs, DType::F64)
    }

    /// Restores into freshly built parameter layouts.
    pub fn decode(path: &Path, bytes: &[u8], generator: ParamStore, critic: ParamStore) -> Result<Self> {
        let c = checkpoint::decode(path, bytes)?;
        if c.kind != STATE_KIND {
            return Err(Error::invalid(format!("{} is a {} container, not a training state", path.display(), c.kind)));
        }
        let h: StateHeader = serde_json::from_value(c.config).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            field: "state header".into(),
            offset: 16,
            reason: e.to_string(),
        })?;
        let mut state = Self::new(generator, critic, 0);
        let mut tensors = c.tensors.into_iter();
        let mut take = |store: &ParamStore, prefix: &str| -> Result<Vec<Tensor>> {
            store
                .names()
                .iter()
                .zip(store.values())
                .map(|(name, like)| {
                    let (n, t) = tensors.next().ok_or_else(|| Error::invalid("training state is missing tensors"))?;
                    if n != format!("{prefix}/{name}") || t.shape() != like.shape() {
                        return Err(Error::invalid(format!("training state tensor {n} does not match {prefix}/{name}")));
                    }
                    Ok(t)
                })
                .collect()
        };
        let g = take(&state.generator, "g")?;
        let gm = take(&state.generator, "g_m")?;
        let gv = take(&state.generator, "g_v")?;
        let d = take(&state.critic, "d")?;
        let dm = take(&state.critic, "d_m")?;
        let dv = take(&state.critic, "d_v")?;
        state.generator.values_mut().clone_from_slice(&g);
        state.critic.values_mut().clone_from_slice(&d);
        state.gen_opt = Adam { m: gm, v: gv, steps: h.gen_opt_steps };
        state.critic_opt = Adam { m: dm, v: dv, steps: h.critic_opt_steps };
        state.step = h.step;
        state.critic_updates = h.critic_updates;
        state.epoch = h.epoch;
        state.batch_index = h.batch_index;
        state.rng = h.rng.restore()?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path, generator: ParamStore, critic: ParamStore) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(path, &bytes, generator, critic)
    }
}

/// The two networks and everything fixed across a run.
pub struct Trainer {
    pub generator: Generator,
    pub critic: Discriminator,
    pub critic_cfg: DiscriminatorConfig,
    pub cfg: TrainConfig,
    pub spec: DataSpec,
    pub freqs: ClassFrequencies,
    pub palette: Vec<[u8; 3]>,
}

/// Stacked tensors of one batch.
pub struct Batch {
    pub input: Tensor,
    pub condition: Tensor,
    pub labels: Vec<u8>,
    pub seg_onehot: Tensor,
    pub depth: Tensor,
    pub guide: Tensor,
}

impl Batch {
    pub fn from_prepared(items: &[Prepared]) -> Self {
        let stack = |f: fn(&Prepared) -> &Tensor| Tensor::stack(&items.iter().map(|p| f(p).clone()).collect::<Vec<_>>());
        Self {
            input: stack(|p| &p.input),
            condition: stack(|p| &p.condition),
            labels: items.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            seg_onehot: stack(|p| &p.seg_onehot),
            depth: stack(|p| &p.depth),
            guide: stack(|p| &p.guide),
        }
    }
}

/// Class frequencies of the camera labels of a sample set.
pub fn class_frequencies(samples: &[PairedSample], classes: usize) -> Result<ClassFrequencies> {
    let mut counts = vec![0u64; classes];
    for s in samples {
        for &l in &s.cam_segments.labels {
            if (l as usize) < classes {
                counts[l as usize] += 1;
            }
        }
    }
    ClassFrequencies::from_counts(&counts)
}

fn check_finite(report: &LossReport, step: u64) -> Result<()> {
    match report.first_non_finite() {
        Some((component, value)) => Err(Error::Divergence { step, component: component.into(), value }),
        None => Ok(()),
    }
}

impl Trainer {
    pub fn new(
        gen_cfg: &GeneratorConfig,
        critic_cfg: &DiscriminatorConfig,
        cfg: &TrainConfig,
        rig: &SensorRig,
        freqs: ClassFrequencies,
        palette: Vec<[u8; 3]>,
    ) -> Result<(Self, TrainState)> {
        cfg.validate()?;
        let spec = DataSpec::new(rig, gen_cfg, cfg.max_range)?;
        let (generator, gp) = Generator::build(gen_cfg, cfg.seed)?;
        let (critic, dp) = Discriminator::build(critic_cfg, gen_cfg.num_classes, gen_cfg.depth_head, cfg.seed.wrapping_add(1))?;
        let state = TrainState::new(gp, dp, cfg.seed.wrapping_add(2));
        Ok((Self { generator, critic, critic_cfg: critic_cfg.clone(), cfg: cfg.clone(), spec, freqs, palette }, state))
    }

    /// Fresh parameter layouts, used to restore saved states.
    pub fn empty_stores(&self) -> Result<(ParamStore, ParamStore)> {
        let gcfg = self.generator.config();
        let (_, g) = Generator::build(gcfg, 0)?;
        let (_, d) = Discriminator::build(&self.critic_cfg, gcfg.num_classes, gcfg.depth_head, 0)?;
        Ok((g, d))
    }

    pub fn load_state(&self, path: &Path) -> Result<TrainState> {
        let (g, d) = self.empty_stores()?;
        TrainState::load(path, g, d)
    }

    /// `critic_steps_per_gen` critic updates followed by one generator update.
    pub fn train_step(&self, state: &mut TrainState, batch: &Batch) -> Result<LossReport> {
        let cfg = &self.cfg;
        let adam = cfg.adam();
        let gp = state.generator.bind(true);
        let out = self.generator.forward(&gp, &Var::constant(batch.input.clone()), Some(&mut state.rng))?;
        let probs = out.probabilities();
        let b = batch.input.shape()[0];
        let (w, h) = self.spec.output_size;
        let fake_depth = out.depth.clone().unwrap_or_else(|| Var::constant(Tensor::zeros(&[b, 1, h, w])));
        let fake = (probs.value().clone(), fake_depth.value().clone());

        let mut d_adv = 0.0;
        for _ in 0..cfg.critic_steps_per_gen {
            let dp = state.critic.bind(true);
            let critic = self.critic.bind(&dp);
            let l = wgan_gp_d_loss(
                &critic,
                (&batch.seg_onehot, &batch.depth),
                (&fake.0, &fake.1),
                &batch.condition,
                cfg.gp_lambda,
                &mut state.rng,
            )?;
            d_adv = l.loss.item();
            if !d_adv.is_finite() {
                return Err(Error::Divergence { step: state.step, component: "d_adv".into(), value: d_adv });
            }
            let grads = grad_values(&l.loss, &dp);
            state.critic_opt.step(&mut state.critic, &grads, &adam)?;
            state.critic_updates += 1;
        }

        let wce = weighted_cross_entropy(&probs, &batch.labels, &self.freqs)?;
        let ls = lovasz_softmax(&probs, &batch.labels)?;
        let mut total = wce.add(&ls);
        let (mut ids_v, mut mae_v, mut ssim_v) = (0.0, 0.0, 0.0);
        if let Some(depth) = &out.depth {
            let ids = inverse_depth_smoothness(depth, &batch.guide)?;
            let m = mae(depth, &batch.depth)?;
            let s = ssim_loss(depth, &batch.depth, cfg.ssim_window)?;
            (ids_v, mae_v, ssim_v) = (ids.item(), m.item(), s.item());
            total = total.add(&ids).add(&m).add(&s);
        }
        let dp = state.critic.bind(false);
        let g_adv = wgan_gp_g_loss(&self.critic.bind(&dp), &probs, &fake_depth, &batch.condition)?;
        total = total.add(&g_adv);
        let report = LossReport::from_components(wce.item(), ls.item(), ids_v, mae_v, ssim_v, d_adv, g_adv.item());
        check_finite(&report, state.step)?;
        let grads = grad_values(&total, &gp);
        state.gen_opt.step(&mut state.generator, &grads, &adam)?;
        state.step += 1;
        Ok(report)
    }
}

/// Per-sample predictions of a generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub segments: SegmentMap,
    /// Depth in `[0, 1]`-scaled units, as trained.
    pub depth: Option<Vec<f64>>,
}

/// Runs the generator in inference mode over `inputs` (`[5 + C, h′, w′]` each).
pub fn predict(generator: &Generator, params: &ParamStore, inputs: &[Tensor], batch_size: usize) -> Result<Vec<Prediction>> {
    let p = params.bind(false);
    let (w, h) = generator.config().output_size;
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch_size.max(1)) {
        let x = Var::constant(Tensor::stack(chunk));
        let o = no_grad(|| generator.forward(&p, &x, None))?;
        let labels = o.logits.value().argmax_axis(1);
        let plane = w * h;
        for i in 0..chunk.len() {
            let segments = SegmentMap {
                width: w,
                height: h,
                labels: labels[i * plane..(i + 1) * plane].iter().map(|&l| l as u8).collect(),
            };
            let depth = o.depth.as_ref().map(|d| d.value().data()[i * plane..(i + 1) * plane].to_vec());
            out.push(Prediction { segments, depth });
        }
    }
    Ok(out)
}

/// Maps `[0, 1]`-scaled depth back to meters with the target's range.
pub fn denormalize_depth(scaled: &[f64], range: (f64, f64), width: usize, height: usize) -> DepthMap {
    let (lo, hi) = range;
    DepthMap { width, height, values: scaled.iter().map(|v| lo + v * (hi - lo)).collect() }
}

fn rgb_planes(img: &crate::image::RgbImage) -> ImagePlanes {
    ImagePlanes { channels: 3, width: img.width, height: img.height, data: img.to_tensor().into_data() }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Computes SWD on painted segments when present.
    pub swd: Option<SwdConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub depth: Option<crate::metrics::DepthMetrics>,
    pub swd: Option<crate::metrics::SwdReport>,
}

/// mIoU, depth metrics and optionally SWD of predictions against the
/// camera targets of `samples`.
pub fn evaluate_predictions(
    preds: &[Prediction],
    samples: &[PairedSample],
    classes: usize,
    palette: &[[u8; 3]],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(classes);
    let mut depth = DepthAccumulator::default();
    let mut has_depth = false;
    for (p, s) in preds.iter().zip(samples) {
        cm.accumulate(&p.segments, &s.cam_segments)?;
        if let Some(d) = &p.depth {
            has_depth = true;
            let gt = &s.cam_depth;
            let range = gt.positive_range().unwrap_or((0.0, 1.0));
            let pred = denormalize_depth(d, range, gt.width, gt.height);
            let mask: Vec<bool> = gt.values.iter().map(|&v| v > 0.0).collect();
            depth.add_maps(&pred, gt, Some(&mask))?;
        }
    }
    let r = iou(&cm);
    let depth = if has_depth { Some(depth.finish()?) } else { None };
    let swd = match &opts.swd {
        Some(cfg) => {
            let real = samples.iter().map(|s| paint_segments(&s.cam_segments, palette).map(|i| rgb_planes(&i))).collect::<Result<Vec<_>>>()?;
            let fake = preds.iter().map(|p| paint_segments(&p.segments, palette).map(|i| rgb_planes(&i))).collect::<Result<Vec<_>>>()?;
            Some(swd(&real, &fake, cfg)?)
        }
        None => None,
    };
    Ok(EvalReport { miou: r.miou, per_class_iou: r.per_class, depth, swd })
}

/// One row of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    /// Mean loss components since the previous row.
    pub losses: LossReport,
    pub miou: f64,
    pub absrel: f64,
    pub swd_avg: f64,
}

pub const METRIC_HEADER: &str = "step,wce,ls,ids,mae,ssim,d_adv,g_adv,miou,absrel,swd_avg";

impl MetricRow {
    pub fn csv(&self) -> String {
        let l = &self.losses;
        let vals = [l.wce, l.ls, l.ids, l.mae, l.ssim_loss, l.d_adv, l.g_adv, self.miou, self.absrel, self.swd_avg];
        let mut s = self.step.to_string();
        for v in vals {
            s.push(',');
            s.push_str(&format!("{v:.9e}"));
        }
        s
    }
}

/// Appends a row, writing the header first when the file is new.
pub fn append_metric_row(path: &Path, row: &MetricRow) -> Result<()> {
    append_line(path, METRIC_HEADER, &row.csv())
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    if reports.is_empty() {
        let nan = f64::NAN;
        return LossReport::from_components(nan, nan, nan, nan, nan, nan, nan);
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    LossReport::from_components(
        avg(|r| r.wce),
        avg(|r| r.ls),
        avg(|r| r.ids),
        avg(|r| r.mae),
        avg(|r| r.ssim_loss),
        avg(|r| r.d_adv),
        avg(|r| r.g_adv),
    )
}

/// Sample order of an epoch; independent of the training rng so a resumed
/// run sees the same order.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Checkpoints, training state and the metric log go here.
    pub out_dir: Option<PathBuf>,
    pub eval: EvalOptions,
    /// Prints each metric row to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub losses: Vec<LossReport>,
    pub rows: Vec<MetricRow>,
}

pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const STATE_FILE: &str = "state.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
/// Per-step loss trace.
pub const LOSSES_FILE: &str = "losses.csv";
pub const LOSS_HEADER: &str = "step,wce,ls,ids,mae,ssim,d_adv,g_adv";

/// CSV line of the loss components after generator update `step`.
pub fn loss_csv(step: u64, r: &LossReport) -> String {
    let mut s = step.to_string();
    for v in [r.wce, r.ls, r.ids, r.mae, r.ssim_loss, r.d_adv, r.g_adv] {
        s.push_str(&format!(",{v:.9e}"));
    }
    s
}

/// Drops log lines written after `step`, left behind by an interrupted run.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let mut kept: Vec<&str> = lines.next().into_iter().collect();
    kept.extend(lines.filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step)));
    let keep = if step == 0 && kept.len() == 1 { String::new() } else { kept.join("\n") + "\n" };
    if keep.is_empty() {
        return fs::remove_file(path).map_err(|e| Error::io(path, e));
    }
    fs::write(path, keep).map_err(|e| Error::io(path, e))
}

fn append_line(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let text = if fresh { format!("{header}\n{line}\n") } else { format!("{line}\n") };
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

impl Trainer {
    /// Augments and prepares the samples at `indices`.
    pub fn make_batch(&self, samples: &[PairedSample], indices: &[usize], rng: &mut ChaCha8Rng) -> Result<Batch> {
        let items = indices
            .iter()
            .map(|&i| {
                let (s, _) = augment(&samples[i], &self.cfg, rng)?;
                prepare(&s, &self.spec, &self.palette)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch::from_prepared(&items))
    }

    pub fn evaluate(&self, params: &ParamStore, samples: &[PairedSample], opts: &EvalOptions) -> Result<EvalReport> {
        let inputs = samples
            .iter()
            .map(|s| lidar_input(&s.cloud, &s.lidar_labels, &self.spec))
            .collect::<Result<Vec<_>>>()?;
        let preds = predict(&self.generator, params, &inputs, self.cfg.batch_size)?;
        evaluate_predictions(&preds, samples, self.spec.num_classes, &self.palette, opts)
    }

    fn save_generator(&self, state: &TrainState, path: &Path) -> Result<()> {
        checkpoint::save_generator(path, self.generator.config(), &state.generator)
    }

    fn metric_row(&self, state: &TrainState, since: &[LossReport], val: &[PairedSample], opts: &FitOptions) -> Result<MetricRow> {
        let e = self.evaluate(&state.generator, val, &opts.eval)?;
        Ok(MetricRow {
            step: state.step,
            losses: mean_report(since),
            miou: e.miou,
            absrel: e.depth.map_or(f64::NAN, |d| d.abs_rel),
            swd_avg: e.swd.map_or(f64::NAN, |s| s.average),
        })
    }

    /// Runs epochs until `max_epochs` or `max_steps`, starting from `state`.
    /// Validation rows use `val`, or `train` when `val` is empty.
    pub fn fit(&self, state: &mut TrainState, train: &[PairedSample], val: &[PairedSample], opts: &FitOptions) -> Result<FitReport> {
        let bs = self.cfg.batch_size;
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if train.len() < bs {
            return Err(Error::invalid(format!("{} training samples cannot fill a batch of {bs}", train.len())));
        }
        let val = if val.is_empty() { train } else { val };
        let n_batches = train.len() / bs;
        let out = opts.out_dir.as_deref();
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            if state.step == 0 {
                self.save_generator(state, &dir.join(GENERATOR_FILE))?;
                state.save(&dir.join(STATE_FILE))?;
            }
            for f in [LOSSES_FILE, METRICS_FILE] {
                truncate_log(&dir.join(f), state.step)?;
            }
        }
        let mut report = FitReport::default();
        let mut since = Vec::new();
        let emit = |row: MetricRow, report: &mut FitReport| -> Result<()> {
            if let Some(dir) = out {
                append_metric_row(&dir.join(METRICS_FILE), &row)?;
            }
            if opts.verbose {
                eprintln!("{METRIC_HEADER}\n{}", row.csv());
            }
            report.rows.push(row);
            Ok(())
        };
        let reached = |s: &TrainState| self.cfg.max_steps.is_some_and(|m| s.step >= m);
        'epochs: while state.epoch < self.cfg.max_epochs {
            let order = epoch_order(self.cfg.seed, state.epoch, train.len());
            while state.batch_index < n_batches {
                if reached(state) {
                    break 'epochs;
                }
                let idx = &order[state.batch_index * bs..(state.batch_index + 1) * bs];
                let batch = self.make_batch(train, idx, &mut state.rng)?;
                let r = self.train_step(state, &batch)?;
                if let Some(dir) = out {
                    append_line(&dir.join(LOSSES_FILE), LOSS_HEADER, &loss_csv(state.step, &r))?;
                }
                report.losses.push(r);
                since.push(r);
                state.batch_index += 1;
            }
            state.batch_index = 0;
            state.epoch += 1;
            let e = state.epoch;
            if self.cfg.val_every > 0 && e % self.cfg.val_every == 0 {
                let row = self.metric_row(state, &since, val, opts)?;
                since.clear();
                emit(row, &mut report)?;
            }
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && e % self.cfg.checkpoint_every == 0 {
                    self.save_generator(state, &dir.join(format!("generator_e{e:04}.ckpt")))?;
                    self.save_generator(state, &dir.join(GENERATOR_FILE))?;
                    state.save(&dir.join(STATE_FILE))?;
                }
            }
        }
        if !since.is_empty() || report.rows.is_empty() {
            let row = self.metric_row(state, &since, val, opts)?;
            emit(row, &mut report)?;
        }
        if let Some(dir) = out {
            self.save_generator(state, &dir.join(GENERATOR_FILE))?;
            state.save(&dir.join(STATE_FILE))?;
        }
        Ok(report)
    }
}
