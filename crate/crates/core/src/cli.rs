//! Command-line verbs: `synth`, `train`, `eval` and `infer`.
//!
//! Every verb reads one [`RunConfig`] (`--config PATH`, defaults otherwise)
//! with trailing `--key value` overrides. Training outputs land in
//! `runs_dir/<config hash>`. Exit codes: 0 success, 1 divergence, 2 bad
//! input or paths.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::load_generator;
use crate::config::{parse_overrides, FrechetEmbedding, RunConfig};
use crate::error::{Error, Result};
use crate::image::{
    write_depth_png, write_rgb_png, write_rgbd_png, write_segment_png, DepthMap, RgbImage, SegmentMap, IGNORE,
};
use crate::metrics::{frechet_images, IdentityEmbedding, ImagePlanes, RandomProjection};
use crate::network::Generator;
use crate::nn::ParamStore;
use crate::projection::{read_bin, read_labels, spherical_project, Point, PointCloud};
use crate::synthdata::{class_names, default_palette, paint_segments, read_manifest, read_split, write_dataset, Manifest, PairedSample};
use crate::training::{
    class_frequencies, evaluate_predictions, lidar_input, predict, DataSpec, EvalOptions, EvalReport, FitOptions,
    FitReport, Prediction, TrainState, Trainer, GENERATOR_FILE, STATE_FILE,
};

/// Name of the config copy written into each run directory.
pub const RUN_CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "titan", version, about = "LiDAR-to-camera semantic and depth translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a seeded synthetic paired dataset.
    Synth(SynthArgs),
    /// Trains, resuming from the run directory's state when present.
    Train(ConfigArgs),
    /// Scores a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Translates one LiDAR scan into camera segments and depth.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config overrides: `--key value`, `--section.key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset root; defaults to the configured data root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Defaults to the run directory's generator.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Scores the ground truth against itself instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub ground_truth: bool,
    /// `train`, `val` or `all`; defaults to the configured split.
    #[arg(long)]
    pub split: Option<String>,
    /// Report directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// KITTI-style `.bin` scan.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Per-point `.label` file; defaults to `../labels/<stem>.label`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Tiles four camera-width views into a full-azimuth strip.
    #[arg(long)]
    pub panoramic: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &parse_overrides(&self.overrides)?)
    }
}

/// Writes `cfg.data.count` samples under `out` and returns the manifest.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    write_dataset(out, &cfg.synth())
}

fn load_split(cfg: &RunConfig, split: &str) -> Result<(Manifest, Vec<PairedSample>)> {
    let root = cfg.data_root()?;
    let (m, samples) = read_split(&root, split)?;
    if m.num_classes != cfg.data.num_classes {
        return Err(Error::config(format!(
            "dataset at {} has {} classes but the config uses {}",
            root.display(),
            m.num_classes,
            cfg.data.num_classes
        )));
    }
    if m.rig != cfg.rig {
        return Err(Error::config(format!("dataset at {} was rendered with a different sensor rig", root.display())));
    }
    Ok((m, samples))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub resumed_from: Option<u64>,
    pub report: FitReport,
}

/// Trains into the run directory, continuing a saved state if one exists.
pub fn cmd_train(cfg: &RunConfig, verbose: bool) -> Result<TrainOutcome> {
    let (m, train) = load_split(cfg, "train")?;
    let (_, val) = load_split(cfg, "val")?;
    let freqs = class_frequencies(&train, cfg.data.num_classes)?;
    let (trainer, fresh) = Trainer::new(&cfg.generator, &cfg.critic, &cfg.train, &cfg.rig, freqs, m.palette)?;
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let cfg_path = run_dir.join(RUN_CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let state_path = run_dir.join(STATE_FILE);
    let (mut state, resumed_from): (TrainState, _) = if state_path.exists() {
        let s = trainer.load_state(&state_path)?;
        let step = s.step;
        (s, Some(step))
    } else {
        (fresh, None)
    };
    let opts = FitOptions { out_dir: Some(run_dir.clone()), eval: cfg.train_eval_options(), verbose };
    let report = trainer.fit(&mut state, &train, &val, &opts)?;
    Ok(TrainOutcome { run_dir, resumed_from, report })
}

/// Prediction source of [`cmd_eval`].
#[derive(Clone, Debug)]
pub enum EvalSource {
    Checkpoint(PathBuf),
    /// The camera targets themselves.
    GroundTruth,
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub split: String,
    pub samples: usize,
    pub report: EvalReport,
    pub frechet: Option<f64>,
    pub csv_path: PathBuf,
    pub table_path: PathBuf,
}

fn ground_truth_prediction(s: &PairedSample) -> Prediction {
    let (lo, hi) = s.cam_depth.positive_range().unwrap_or((0.0, 1.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    Prediction {
        segments: s.cam_segments.clone(),
        depth: Some(s.cam_depth.values.iter().map(|&d| if d > 0.0 { (d - lo) / span } else { 0.0 }).collect()),
    }
}

fn painted_planes(seg: &SegmentMap, palette: &[[u8; 3]]) -> Result<ImagePlanes> {
    let img = paint_segments(seg, palette)?;
    Ok(ImagePlanes { channels: 3, width: img.width, height: img.height, data: img.to_tensor().into_data() })
}

/// mIoU, per-class IoU, depth metrics, SWD and the configured Fréchet
/// distance over `split`, written as CSV and as a text table.
pub fn cmd_eval(cfg: &RunConfig, source: &EvalSource, split: &str, out: &Path) -> Result<EvalSummary> {
    let (m, samples) = load_split(cfg, split)?;
    if samples.is_empty() {
        return Err(Error::invalid(format!("split {split} is empty")));
    }
    let preds = match source {
        EvalSource::Checkpoint(path) => {
            let (g, params) = load_generator(path)?;
            let spec = DataSpec::new(&cfg.rig, g.config(), cfg.train.max_range)?;
            let inputs = samples
                .iter()
                .map(|s| lidar_input(&s.cloud, &s.lidar_labels, &spec))
                .collect::<Result<Vec<_>>>()?;
            predict(&g, &params, &inputs, cfg.train.batch_size)?
        }
        EvalSource::GroundTruth => samples.iter().map(ground_truth_prediction).collect(),
    };
    let opts = EvalOptions { swd: cfg.eval.swd.then_some(cfg.eval.swd_config) };
    let report = evaluate_predictions(&preds, &samples, m.num_classes, &m.palette, &opts)?;
    let frechet = match cfg.eval.frechet {
        FrechetEmbedding::None => None,
        emb if samples.len() >= 2 => {
            let real = samples.iter().map(|s| painted_planes(&s.cam_segments, &m.palette)).collect::<Result<Vec<_>>>()?;
            let fake = preds.iter().map(|p| painted_planes(&p.segments, &m.palette)).collect::<Result<Vec<_>>>()?;
            Some(match emb {
                FrechetEmbedding::Identity => frechet_images(&real, &fake, &IdentityEmbedding)?,
                _ => frechet_images(&real, &fake, &RandomProjection::new(cfg.eval.frechet_dim, cfg.eval.frechet_seed))?,
            })
        }
        _ => None,
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let names = class_names(m.num_classes);
    let csv_path = out.join(format!("eval_{split}.csv"));
    let table_path = out.join(format!("eval_{split}.txt"));
    fs::write(&csv_path, eval_csv(split, samples.len(), &names, &report, frechet)).map_err(|e| Error::io(&csv_path, e))?;
    let label = match source {
        EvalSource::Checkpoint(p) => p.display().to_string(),
        EvalSource::GroundTruth => "ground truth".into(),
    };
    fs::write(&table_path, eval_table(&label, split, samples.len(), &names, &report, frechet))
        .map_err(|e| Error::io(&table_path, e))?;
    Ok(EvalSummary { split: split.into(), samples: samples.len(), report, frechet, csv_path, table_path })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

/// Header plus one row; absent values are empty cells.
pub fn eval_csv(split: &str, n: usize, names: &[&str], r: &EvalReport, frechet: Option<f64>) -> String {
    let mut header = vec!["split".to_string(), "samples".into()];
    header.extend(names.iter().map(|c| format!("iou_{c}")));
    header.extend(
        ["miou", "abs_rel", "sq_rel", "rms", "rms_log10", "delta1", "delta2", "delta3", "swd_avg", "frechet"]
            .map(String::from),
    );
    let mut row = vec![split.to_string(), n.to_string()];
    row.extend(r.per_class_iou.iter().map(|v| fmt_opt(*v)));
    row.push(format!("{:.6}", r.miou));
    let d = r.depth.as_ref();
    for f in [
        d.map(|d| d.abs_rel),
        d.map(|d| d.sq_rel),
        d.map(|d| d.rms),
        d.map(|d| d.rms_log10),
        d.map(|d| d.delta1),
        d.map(|d| d.delta2),
        d.map(|d| d.delta3),
        r.swd.as_ref().map(|s| s.average),
        frechet,
    ] {
        row.push(fmt_opt(f));
    }
    format!("{}\n{}\n", header.join(","), row.join(","))
}

pub fn eval_table(label: &str, split: &str, n: usize, names: &[&str], r: &EvalReport, frechet: Option<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{label} on {split} ({n} samples)\n");
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
    let mut head = format!("{:<16}", "approach");
    let mut row = format!("{:<16}", "model");
    for (name, iou) in names.iter().zip(&r.per_class_iou) {
        let w = name.len().max(6) + 2;
        let _ = write!(head, "{name:>w$}");
        let _ = write!(row, "{:>w$}", cell(*iou));
    }
    let _ = writeln!(s, "{head}{:>8}", "mIoU");
    let _ = writeln!(s, "{row}{:>8}\n", cell(Some(r.miou)));
    if let Some(d) = &r.depth {
        let _ = writeln!(s, "{:>9}{:>9}{:>9}{:>11}{:>9}{:>9}{:>9}", "AbsRel", "SqRel", "RMS", "RMSlog10", "d<1.25", "d<1.25^2", "d<1.25^3");
        let _ = writeln!(
            s,
            "{:>9.4}{:>9.4}{:>9.4}{:>11.4}{:>9.4}{:>9.4}{:>9.4}\n",
            d.abs_rel, d.sq_rel, d.rms, d.rms_log10, d.delta1, d.delta2, d.delta3
        );
    }
    if let Some(w) = &r.swd {
        let levels: Vec<String> = w.per_level.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(s, "SWD (x1e3, finest first): {} | avg {:.3}", levels.join(" "), w.average);
    }
    if let Some(f) = frechet {
        let _ = writeln!(s, "Frechet distance: {f:.4}");
    }
    s
}

/// Intermediate and final maps of one camera-width view.
struct View {
    range: DepthMap,
    lidar_segments: SegmentMap,
    segments: SegmentMap,
    depth: Option<DepthMap>,
}

fn infer_view(g: &Generator, params: &ParamStore, spec: &DataSpec, cloud: &PointCloud, labels: &[u16]) -> Result<View> {
    let full = spherical_project(cloud, &spec.projection)?;
    let img = full.columns(spec.crop.0, spec.crop.1 - spec.crop.0);
    let (w, h) = (img.width, img.height);
    let mut range = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            if img.is_valid(u, v) {
                range[v * w + u] = img.range_at(u, v) as f64;
            }
        }
    }
    let classes = spec.num_classes;
    let lidar_labels = img
        .labels_from(labels)
        .into_iter()
        .map(|l| l.filter(|&l| (l as usize) < classes).map_or(IGNORE, |l| l as u8))
        .collect();
    let input = lidar_input(cloud, labels, spec)?;
    let pred = predict(g, params, &[input], 1)?.pop().expect("one prediction");
    // Training normalizes depth per sample, so the LiDAR range span stands in
    // for the unknown camera span.
    let valid: Vec<f64> = range.iter().copied().filter(|&r| r > 0.0).collect();
    let lo = valid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().cloned().fold(0.0, f64::max);
    let (lo, hi) = if valid.is_empty() { (0.0, spec.max_range) } else { (lo, hi) };
    let (ow, oh) = spec.output_size;
    let depth = pred.depth.map(|d| DepthMap { width: ow, height: oh, values: d.iter().map(|v| lo + v.clamp(0.0, 1.0) * (hi - lo)).collect() });
    Ok(View {
        range: DepthMap::new(w, h, range)?,
        lidar_segments: SegmentMap::new(w, h, lidar_labels)?,
        segments: pred.segments,
        depth,
    })
}

/// Rotates about the vertical axis by `quarter` quarter turns
/// counter-clockwise, exactly.
fn rotate_quarter(cloud: &PointCloud, quarter: usize) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let (x, y) = match quarter % 4 {
                0 => (p.x, p.y),
                1 => (-p.y, p.x),
                2 => (-p.x, -p.y),
                _ => (p.y, -p.x),
            };
            Point::new(x, y, p.z, p.intensity)
        })
        .collect();
    PointCloud::new(points)
}

fn hconcat<T: Copy>(parts: &[(usize, usize, &[T])]) -> (usize, usize, Vec<T>) {
    let h = parts[0].1;
    let w: usize = parts.iter().map(|p| p.0).sum();
    let mut out = Vec::with_capacity(w * h);
    for v in 0..h {
        for (pw, _, data) in parts {
            out.extend_from_slice(&data[v * pw..(v + 1) * pw]);
        }
    }
    (w, h, out)
}

fn tile(views: &[View]) -> Result<View> {
    let seg = |f: fn(&View) -> &SegmentMap| -> Result<SegmentMap> {
        let parts: Vec<_> = views.iter().map(|v| (f(v).width, f(v).height, f(v).labels.as_slice())).collect();
        let (w, h, d) = hconcat(&parts);
        SegmentMap::new(w, h, d)
    };
    let depth = |maps: Vec<&DepthMap>| -> Result<DepthMap> {
        let parts: Vec<_> = maps.iter().map(|m| (m.width, m.height, m.values.as_slice())).collect();
        let (w, h, d) = hconcat(&parts);
        DepthMap::new(w, h, d)
    };
    let pred_depth = match views.iter().map(|v| v.depth.as_ref()).collect::<Option<Vec<_>>>() {
        Some(maps) => Some(depth(maps)?),
        None => None,
    };
    Ok(View {
        range: depth(views.iter().map(|v| &v.range).collect())?,
        lidar_segments: seg(|v| &v.lidar_segments)?,
        segments: seg(|v| &v.segments)?,
        depth: pred_depth,
    })
}

/// Sibling `labels/<stem>.label` of a `velodyne/<stem>.bin` scan.
pub fn default_labels_path(cloud: &Path) -> Option<PathBuf> {
    let stem = cloud.file_stem()?;
    let dir = cloud.parent()?.parent()?;
    Some(dir.join("labels").join(stem).with_extension("label"))
}

pub const INFER_FILES: [&str; 7] =
    ["range.png", "lidar_segments.png", "lidar_segments_rgb.png", "segments.png", "segments_rgb.png", "depth.png", "rgbd.png"];

/// Runs projection, generator and painter on one scan and writes every
/// stage as an image. Returns the written paths.
pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    cloud_path: &Path,
    labels_path: Option<&Path>,
    out: &Path,
    panoramic: bool,
) -> Result<Vec<PathBuf>> {
    let (g, params) = load_generator(checkpoint)?;
    let spec = DataSpec::new(&cfg.rig, g.config(), cfg.train.max_range)?;
    let cloud = read_bin(cloud_path)?;
    let labels_path = match labels_path {
        Some(p) => p.to_path_buf(),
        None => default_labels_path(cloud_path)
            .filter(|p| p.exists())
            .ok_or_else(|| Error::invalid(format!("no labels given and none found beside {}", cloud_path.display())))?,
    };
    let labels = read_labels(&labels_path)?;
    if labels.len() != cloud.len() {
        return Err(Error::invalid(format!("{} labels for {} points", labels.len(), cloud.len())));
    }
    let view = if panoramic {
        let views = (0..4).map(|k| infer_view(&g, &params, &spec, &rotate_quarter(&cloud, k), &labels)).collect::<Result<Vec<_>>>()?;
        tile(&views)?
    } else {
        infer_view(&g, &params, &spec, &cloud, &labels)?
    };
    let palette = root_palette(cfg);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = |name: &str| out.join(name);
    let mut written = Vec::new();
    write_depth_png(&path(INFER_FILES[0]), &view.range)?;
    write_segment_png(&path(INFER_FILES[1]), &view.lidar_segments, &palette)?;
    write_rgb_png(&path(INFER_FILES[2]), &paint_segments(&view.lidar_segments, &palette)?)?;
    write_segment_png(&path(INFER_FILES[3]), &view.segments, &palette)?;
    let painted: RgbImage = paint_segments(&view.segments, &palette)?;
    write_rgb_png(&path(INFER_FILES[4]), &painted)?;
    written.extend(INFER_FILES[..5].iter().map(|n| path(n)));
    if let Some(d) = &view.depth {
        write_depth_png(&path(INFER_FILES[5]), d)?;
        write_rgbd_png(&path(INFER_FILES[6]), &painted, d)?;
        written.extend(INFER_FILES[5..].iter().map(|n| path(n)));
    }
    Ok(written)
}

/// The dataset palette when a manifest is reachable, else the default one.
fn root_palette(cfg: &RunConfig) -> Vec<[u8; 3]> {
    cfg.data_root()
        .ok()
        .and_then(|r| read_manifest(&r).ok())
        .filter(|m| m.num_classes == cfg.data.num_classes)
        .map_or_else(|| default_palette(cfg.data.num_classes), |m| m.palette)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let mut cfg = a.cfg.load()?;
            if let Some(c) = a.count {
                cfg.data.count = c;
            }
            let out = match a.out {
                Some(o) => o,
                None => cfg.data_root()?,
            };
            let m = cmd_synth(&cfg, &out)?;
            println!("wrote {} train and {} val samples to {}", m.train.len(), m.val.len(), out.display());
        }
        Command::Train(a) => {
            let cfg = a.load()?;
            let o = cmd_train(&cfg, true)?;
            if let Some(step) = o.resumed_from {
                println!("resumed from step {step}");
            }
            if let Some(row) = o.report.rows.last() {
                println!("step {} miou {:.4} absrel {:.4}", row.step, row.miou, row.absrel);
            }
            println!("run directory {}", o.run_dir.display());
        }
        Command::Eval(a) => {
            let cfg = a.cfg.load()?;
            let source = if a.ground_truth {
                EvalSource::GroundTruth
            } else {
                EvalSource::Checkpoint(a.checkpoint.unwrap_or_else(|| cfg.run_dir().join(GENERATOR_FILE)))
            };
            let split = a.split.unwrap_or_else(|| cfg.eval.split.clone());
            let out = a.out.unwrap_or_else(|| cfg.run_dir());
            let s = cmd_eval(&cfg, &source, &split, &out)?;
            let table = fs::read_to_string(&s.table_path).map_err(|e| Error::io(&s.table_path, e))?;
            print!("{table}");
            println!("wrote {}", s.csv_path.display());
        }
        Command::Infer(a) => {
            let cfg = a.cfg.load()?;
            let ckpt = a.checkpoint.unwrap_or_else(|| cfg.run_dir().join(GENERATOR_FILE));
            for p in cmd_infer(&cfg, &ckpt, &a.cloud, a.labels.as_deref(), &a.out, a.panoramic)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the verb and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_after_flags() {
        let cli = Cli::try_parse_from(["titan", "train", "--config", "c.toml", "--max-epochs", "0", "--train.seed=2"]).unwrap();
        match cli.command {
            Command::Train(a) => {
                assert_eq!(a.config.as_deref(), Some(Path::new("c.toml")));
                assert_eq!(a.overrides, ["--max-epochs", "0", "--train.seed=2"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quarter_turns() {
        let c = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0, 0.5)]);
        let r = rotate_quarter(&c, 1);
        assert_eq!((r.points[0].x, r.points[0].y), (-2.0, 1.0));
        assert_eq!(rotate_quarter(&rotate_quarter(&c, 3), 1), c);
    }

    #[test]
    fn labels_beside_scan() {
        let p = default_labels_path(Path::new("d/sequences/00/velodyne/000007.bin")).unwrap();
        assert_eq!(p, Path::new("d/sequences/00/labels/000007.label"));
    }
}
