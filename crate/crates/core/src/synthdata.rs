//! Parametric toy world with a co-located LiDAR and pinhole camera.
//!
//! Both sensors sit at the origin. The LiDAR sweeps a regular
//! azimuth/elevation grid; the camera looks along `+x`, pitched down, with
//! `+y` to the left of the image. Scenes are a ground plane with a road
//! strip, axis-aligned boxes (cars, buildings) and vertical cylinders
//! (poles, trunks). A ring of buildings encloses every random scene so that
//! nearly every ray returns.
//!
//! On disk a dataset follows SemanticKITTI's sequence layout:
//!
//! ```text
//! root/manifest.json
//! root/sequences/00/velodyne/000000.bin   f32 (x, y, z, intensity)
//! root/sequences/00/labels/000000.label   u32, class id in the low 16 bits
//! root/sequences/00/segments/000000.png   8-bit indexed camera classes
//! root/sequences/00/depth/000000.png      16-bit camera depth, scaled
//! root/sequences/00/image_2/000000.png    painted RGB
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{
    read_depth_png, read_rgb_png, read_segment_png, write_depth_png, write_rgb_png, write_segment_png, DepthMap,
    RgbImage, SegmentMap, IGNORE,
};
use crate::projection::{read_bin, read_labels, write_bin, write_labels, Point, PointCloud, ProjectionConfig};

/// Semantic classes of the toy world.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneClass {
    Road,
    Terrain,
    Car,
    Building,
    Pole,
    Trunk,
}

impl SceneClass {
    pub const ALL: [SceneClass; 6] =
        [SceneClass::Road, SceneClass::Terrain, SceneClass::Car, SceneClass::Building, SceneClass::Pole, SceneClass::Trunk];

    /// Class id under a `classes`-wide label set. With four classes poles
    /// and trunks fold into building.
    pub fn id(self, classes: usize) -> u8 {
        match (self, classes) {
            (SceneClass::Pole | SceneClass::Trunk, 4) => SceneClass::Building as u8,
            _ => self as u8,
        }
    }

    fn albedo(self) -> f64 {
        match self {
            SceneClass::Road => 0.25,
            SceneClass::Terrain => 0.55,
            SceneClass::Car => 0.9,
            SceneClass::Building => 0.7,
            SceneClass::Pole => 0.45,
            SceneClass::Trunk => 0.35,
        }
    }
}

impl SceneClass {
    pub fn name(self) -> &'static str {
        match self {
            SceneClass::Road => "road",
            SceneClass::Terrain => "terrain",
            SceneClass::Car => "car",
            SceneClass::Building => "building",
            SceneClass::Pole => "pole",
            SceneClass::Trunk => "trunk",
        }
    }
}

/// Names of the class ids of a `classes`-wide label set.
pub fn class_names(classes: usize) -> Vec<&'static str> {
    SceneClass::ALL.iter().take(classes).map(|c| c.name()).collect()
}

pub const SUPPORTED_CLASS_COUNTS: [usize; 2] = [4, 6];

/// Default colors, indexed by class id.
pub fn default_palette(classes: usize) -> Vec<[u8; 3]> {
    let all = [[128, 64, 128], [152, 251, 152], [0, 0, 142], [70, 70, 70], [153, 153, 153], [107, 142, 35]];
    all[..classes].to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Road {
    /// Direction of the strip, radians from `+x`.
    pub heading: f64,
    /// Signed lateral offset of the strip center from the origin, meters.
    pub offset: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPrim {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: SceneClass,
}

/// Vertical cylinder standing on the ground.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
    pub class: SceneClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Ground plane sits at `z = −sensor_height`.
    pub sensor_height: f64,
    pub road: Option<Road>,
    pub boxes: Vec<BoxPrim>,
    pub cylinders: Vec<Cylinder>,
    pub num_classes: usize,
    pub palette: Vec<[u8; 3]>,
    pub seed: u64,
}

impl SceneSpec {
    /// Ground only.
    pub fn empty(num_classes: usize, sensor_height: f64) -> Self {
        Self {
            sensor_height,
            road: None,
            boxes: Vec::new(),
            cylinders: Vec::new(),
            num_classes,
            palette: default_palette(num_classes),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_CLASS_COUNTS.contains(&self.num_classes) {
            return Err(Error::invalid(format!("{} classes; supported: {SUPPORTED_CLASS_COUNTS:?}", self.num_classes)));
        }
        if !(self.sensor_height > 0.0) {
            return Err(Error::invalid(format!("sensor height {} must be positive", self.sensor_height)));
        }
        if self.palette.len() < self.num_classes {
            return Err(Error::invalid("palette has fewer colors than classes"));
        }
        let ground = -self.sensor_height;
        for (i, b) in self.boxes.iter().enumerate() {
            if (0..3).any(|a| !(b.max[a] > b.min[a])) {
                return Err(Error::invalid(format!("box {i} has zero volume")));
            }
            if b.min[2] < ground - 1e-9 {
                return Err(Error::invalid(format!("box {i} extends below the ground")));
            }
        }
        for (i, c) in self.cylinders.iter().enumerate() {
            if !(c.radius > 0.0 && c.height > 0.0) {
                return Err(Error::invalid(format!("cylinder {i} has zero volume")));
            }
        }
        if let Some(r) = &self.road {
            if !(r.width > 0.0) {
                return Err(Error::invalid("road width must be positive"));
            }
        }
        Ok(())
    }

    /// Random street scene enclosed by buildings.
    pub fn random(seed: u64, num_classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1.73;
        let ground = -h;
        let mut boxes = Vec::new();
        let half = rng.gen_range(18.0..28.0);
        // Four walls, each split into facades with their own setback and height.
        let segments = 4;
        for side in 0..4 {
            for s in 0..segments {
                let a = -half + 2.0 * half * s as f64 / segments as f64;
                let b = a + 2.0 * half / segments as f64;
                let setback = rng.gen_range(0.0..5.0);
                let top = ground + rng.gen_range(8.0..16.0);
                let (near, far) = (half + setback, half + setback + 3.0);
                let (min, max) = match side {
                    0 => ([near, a - 8.0, ground], [far, b + 8.0, top]),
                    1 => ([-far, a - 8.0, ground], [-near, b + 8.0, top]),
                    2 => ([a - 8.0, near, ground], [b + 8.0, far, top]),
                    _ => ([a - 8.0, -far, ground], [b + 8.0, -near, top]),
                };
                boxes.push(BoxPrim { min, max, class: SceneClass::Building });
            }
        }
        let road = Road {
            heading: rng.gen_range(-0.5..0.5),
            offset: rng.gen_range(-3.0..3.0),
            width: rng.gen_range(6.0..10.0),
        };
        let clear_of_origin = |x: f64, y: f64, margin: f64| x.abs() > margin || y.abs() > margin;
        let cars = rng.gen_range(2..=6);
        let (sin, cos) = road.heading.sin_cos();
        while boxes.iter().filter(|b| b.class == SceneClass::Car).count() < cars {
            let along = rng.gen_range(-half + 4.0..half - 4.0);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let lateral = road.offset + side * rng.gen_range(0.0..road.width / 2.0);
            let (x, y) = (along * cos - lateral * sin, along * sin + lateral * cos);
            let (lx, ly) = if rng.gen_bool(0.5) { (2.2, 0.9) } else { (0.9, 2.2) };
            if !clear_of_origin(x, y, 4.0) || x.abs() + lx > half || y.abs() + ly > half {
                continue;
            }
            let top = ground + rng.gen_range(1.3..1.8);
            boxes.push(BoxPrim { min: [x - lx, y - ly, ground], max: [x + lx, y + ly, top], class: SceneClass::Car });
        }
        let mut cylinders = Vec::new();
        let (poles, trunks) = (rng.gen_range(1..=4), rng.gen_range(0..=3));
        for i in 0..poles + trunks {
            let (class, radius, height) = if i < poles {
                (SceneClass::Pole, 0.15, rng.gen_range(4.0..7.0))
            } else {
                (SceneClass::Trunk, rng.gen_range(0.25..0.45), rng.gen_range(3.0..5.0))
            };
            loop {
                let (x, y) = (rng.gen_range(-half + 2.0..half - 2.0), rng.gen_range(-half + 2.0..half - 2.0));
                let lateral = -x * sin + y * cos - road.offset;
                if clear_of_origin(x, y, 3.0) && lateral.abs() > road.width / 2.0 + 0.5 {
                    cylinders.push(Cylinder { center: [x, y], radius, height, class });
                    break;
                }
            }
        }
        Self {
            sensor_height: h,
            road: Some(road),
            boxes,
            cylinders,
            num_classes,
            palette: default_palette(num_classes),
            seed,
        }
    }
}

/// LiDAR ray grid; rays pass through the pixel centers of [`Self::grid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarSpec {
    pub columns: usize,
    pub beams: usize,
    pub fov_up: f64,
    pub fov_down: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self { columns: 256, beams: 16, fov_up: 3.0, fov_down: -25.0 }
    }
}

impl LidarSpec {
    pub fn grid(&self) -> ProjectionConfig {
        ProjectionConfig { width: self.columns, height: self.beams, fov_up: self.fov_up, fov_down: self.fov_down }
    }

    /// Unit direction of the ray through pixel center `(u, v)`.
    pub fn ray(&self, u: usize, v: usize) -> [f64; 3] {
        let az = std::f64::consts::PI * (1.0 - 2.0 * (u as f64 + 0.5) / self.columns as f64);
        let (up, down) = (self.fov_up.to_radians(), self.fov_down.to_radians());
        let el = down + (1.0 - (v as f64 + 0.5) / self.beams as f64) * (up - down);
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, degrees.
    pub hfov: f64,
    /// Rotation about `y`, degrees; negative looks down.
    pub pitch: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { width: 128, height: 32, hfov: 90.0, pitch: -11.0 }
    }
}

impl CameraSpec {
    pub fn focal(&self) -> f64 {
        self.width as f64 / 2.0 / (self.hfov.to_radians() / 2.0).tan()
    }

    /// Forward, right and down axes in the world frame.
    pub fn axes(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.pitch.to_radians().sin_cos();
        [[c, 0.0, s], [0.0, -1.0, 0.0], [s, 0.0, -c]]
    }

    /// Horizontal azimuth window `(min, max)` in degrees.
    pub fn azimuth_window(&self) -> (f64, f64) {
        (-self.hfov / 2.0, self.hfov / 2.0)
    }

    /// Ray through continuous pixel coordinates, scaled so its forward
    /// component is one.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        let f = self.focal();
        let (a, b) = ((u - self.width as f64 / 2.0) / f, (v - self.height as f64 / 2.0) / f);
        let [fw, rt, dn] = self.axes();
        [0, 1, 2].map(|i| fw[i] + a * rt[i] + b * dn[i])
    }

    /// Continuous pixel coordinates of a world point, `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let [fw, rt, dn] = self.axes();
        let z = dot(p, fw);
        if z <= 0.0 {
            return None;
        }
        let f = self.focal();
        Some((self.width as f64 / 2.0 + f * dot(p, rt) / z, self.height as f64 / 2.0 + f * dot(p, dn) / z))
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorRig {
    pub lidar: LidarSpec,
    pub camera: CameraSpec,
}

/// Nearest surface along a ray from the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    /// Distance along the unit direction.
    pub distance: f64,
    pub class: SceneClass,
    pub normal: [f64; 3],
}

/// First intersection of the unit ray `dir` from the origin with the scene.
pub fn cast_ray(scene: &SceneSpec, dir: [f64; 3]) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |t: f64, class: SceneClass, normal: [f64; 3]| {
        if t > 1e-9 && best.map_or(true, |b| t < b.distance) {
            best = Some(Hit { distance: t, class, normal });
        }
    };
    let ground = -scene.sensor_height;
    if dir[2] < 0.0 {
        let t = ground / dir[2];
        let (x, y) = (t * dir[0], t * dir[1]);
        let class = match &scene.road {
            Some(r) => {
                let (s, c) = r.heading.sin_cos();
                if (-x * s + y * c - r.offset).abs() <= r.width / 2.0 {
                    SceneClass::Road
                } else {
                    SceneClass::Terrain
                }
            }
            None => SceneClass::Terrain,
        };
        consider(t, class, [0.0, 0.0, 1.0]);
    }
    for b in &scene.boxes {
        if let Some((t, n)) = ray_box(dir, b) {
            consider(t, b.class, n);
        }
    }
    for c in &scene.cylinders {
        if let Some((t, n)) = ray_cylinder(dir, c, ground) {
            consider(t, c.class, n);
        }
    }
    best
}

fn ray_box(d: [f64; 3], b: &BoxPrim) -> Option<(f64, [f64; 3])> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    let mut sign = 0.0;
    for a in 0..3 {
        if d[a] == 0.0 {
            if 0.0 < b.min[a] || 0.0 > b.max[a] {
                return None;
            }
            continue;
        }
        let (mut lo, mut hi) = (b.min[a] / d[a], b.max[a] / d[a]);
        let mut s = -1.0;
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
            s = 1.0;
        }
        if lo > t0 {
            t0 = lo;
            axis = a;
            sign = s;
        }
        t1 = t1.min(hi);
    }
    if t0 > t1 || t0 <= 0.0 {
        return None;
    }
    let mut n = [0.0; 3];
    n[axis] = sign;
    Some((t0, n))
}

fn ray_cylinder(d: [f64; 3], c: &Cylinder, ground: f64) -> Option<(f64, [f64; 3])> {
    let top = ground + c.height;
    let [cx, cy] = c.center;
    let mut best: Option<(f64, [f64; 3])> = None;
    let a = d[0] * d[0] + d[1] * d[1];
    if a > 0.0 {
        let b = -2.0 * (d[0] * cx + d[1] * cy);
        let k = cx * cx + cy * cy - c.radius * c.radius;
        let disc = b * b - 4.0 * a * k;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / (2.0 * a);
            let z = t * d[2];
            if t > 0.0 && z >= ground && z <= top {
                let n = [(t * d[0] - cx) / c.radius, (t * d[1] - cy) / c.radius, 0.0];
                best = Some((t, n));
            }
        }
    }
    if d[2] < 0.0 && top < 0.0 {
        let t = top / d[2];
        let (x, y) = (t * d[0] - cx, t * d[1] - cy);
        if x * x + y * y <= c.radius * c.radius && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, [0.0, 0.0, 1.0]));
        }
    }
    best
}

fn lambertian(hit: &Hit, dir: [f64; 3]) -> f32 {
    let cos = -dot(hit.normal, dir);
    (cos.clamp(0.0, 1.0) * hit.class.albedo()) as f32
}

/// One paired LiDAR/camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub cloud: PointCloud,
    /// Class id of every point.
    pub lidar_labels: Vec<u16>,
    pub cam_segments: SegmentMap,
    /// Camera z-depth in meters; 0 where no surface is seen.
    pub cam_depth: DepthMap,
    pub cam_rgb: Option<RgbImage>,
}

/// Renders camera segments and depth at the pixel centers.
pub fn render_camera(scene: &SceneSpec, camera: &CameraSpec) -> (SegmentMap, DepthMap) {
    let (w, h) = (camera.width, camera.height);
    let mut labels = vec![IGNORE; w * h];
    let mut depth = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let ray = camera.ray(u as f64 + 0.5, v as f64 + 0.5);
            let len = norm(ray);
            let dir = ray.map(|x| x / len);
            if let Some(hit) = cast_ray(scene, dir) {
                labels[v * w + u] = hit.class.id(scene.num_classes);
                depth[v * w + u] = hit.distance / len;
            }
        }
    }
    (SegmentMap { width: w, height: h, labels }, DepthMap { width: w, height: h, values: depth })
}

/// Casts the LiDAR grid and renders the camera view of one scene.
pub fn generate_scene(scene: &SceneSpec, rig: &SensorRig) -> Result<PairedSample> {
    scene.validate()?;
    rig.lidar.grid().validate()?;
    let mut points = Vec::new();
    let mut lidar_labels = Vec::new();
    for v in 0..rig.lidar.beams {
        for u in 0..rig.lidar.columns {
            let dir = rig.lidar.ray(u, v);
            if let Some(hit) = cast_ray(scene, dir) {
                let p = dir.map(|x| (x * hit.distance) as f32);
                points.push(Point::new(p[0], p[1], p[2], lambertian(&hit, dir)));
                lidar_labels.push(hit.class.id(scene.num_classes) as u16);
            }
        }
    }
    let (cam_segments, cam_depth) = render_camera(scene, &rig.camera);
    let cam_rgb = Some(paint_segments(&cam_segments, &scene.palette)?);
    Ok(PairedSample { cloud: PointCloud::new(points), lidar_labels, cam_segments, cam_depth, cam_rgb })
}

/// Per-pixel palette lookup; ignored pixels are black.
pub fn paint_segments(seg: &SegmentMap, palette: &[[u8; 3]]) -> Result<RgbImage> {
    let pixels = seg
        .labels
        .iter()
        .map(|&l| match l {
            IGNORE => Ok([0, 0, 0]),
            _ => palette
                .get(l as usize)
                .copied()
                .ok_or_else(|| Error::invalid(format!("class {l} has no palette color"))),
        })
        .collect::<Result<_>>()?;
    Ok(RgbImage { width: seg.width, height: seg.height, pixels })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub palette: Vec<[u8; 3]>,
    pub seed: u64,
    pub rig: SensorRig,
    /// Sequence directory under `sequences/`.
    pub sequence: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl Manifest {
    pub fn frames(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
const SEQUENCE: &str = "00";

fn frame_paths(root: &Path, sequence: &str, frame: &str) -> [PathBuf; 5] {
    let seq = root.join("sequences").join(sequence);
    [
        seq.join("velodyne").join(format!("{frame}.bin")),
        seq.join("labels").join(format!("{frame}.label")),
        seq.join("segments").join(format!("{frame}.png")),
        seq.join("depth").join(format!("{frame}.png")),
        seq.join("image_2").join(format!("{frame}.png")),
    ]
}

/// Writes one frame into the sequence layout, creating directories.
pub fn write_sample(root: &Path, sequence: &str, frame: &str, sample: &PairedSample, palette: &[[u8; 3]]) -> Result<()> {
    let paths = frame_paths(root, sequence, frame);
    for p in &paths {
        let dir = p.parent().expect("frame paths have parents");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_bin(&paths[0], &sample.cloud)?;
    write_labels(&paths[1], &sample.lidar_labels)?;
    write_segment_png(&paths[2], &sample.cam_segments, palette)?;
    write_depth_png(&paths[3], &sample.cam_depth)?;
    match &sample.cam_rgb {
        Some(rgb) => write_rgb_png(&paths[4], rgb),
        None => Ok(()),
    }
}

pub fn read_sample(root: &Path, sequence: &str, frame: &str) -> Result<PairedSample> {
    let paths = frame_paths(root, sequence, frame);
    let cloud = read_bin(&paths[0])?;
    let lidar_labels = read_labels(&paths[1])?;
    if lidar_labels.len() != cloud.len() {
        return Err(Error::invalid(format!(
            "{}: {} labels for {} points",
            paths[1].display(),
            lidar_labels.len(),
            cloud.len()
        )));
    }
    let cam_segments = read_segment_png(&paths[2])?;
    let cam_depth = read_depth_png(&paths[3])?;
    let cam_rgb = if paths[4].exists() { Some(read_rgb_png(&paths[4])?) } else { None };
    Ok(PairedSample { cloud, lidar_labels, cam_segments, cam_depth, cam_rgb })
}

/// Options for writing a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Fraction of frames assigned to the validation split.
    pub val_fraction: f64,
    pub rig: SensorRig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { count: 200, num_classes: 4, seed: 0, val_fraction: 0.1, rig: SensorRig::default() }
    }
}

/// Scene seed of frame `i`.
pub fn frame_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

/// Generates `cfg.count` frames in memory.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<PairedSample>> {
    (0..cfg.count)
        .map(|i| generate_scene(&SceneSpec::random(frame_seed(cfg.seed, i), cfg.num_classes), &cfg.rig))
        .collect()
}

/// Generates and writes a dataset plus its manifest.
pub fn write_dataset(root: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&cfg.val_fraction) {
        return Err(Error::invalid(format!("val_fraction {} outside [0, 1]", cfg.val_fraction)));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let palette = default_palette(cfg.num_classes);
    let n_val = (cfg.count as f64 * cfg.val_fraction).round() as usize;
    let mut manifest = Manifest {
        num_classes: cfg.num_classes,
        palette: palette.clone(),
        seed: cfg.seed,
        rig: cfg.rig.clone(),
        sequence: SEQUENCE.into(),
        train: Vec::new(),
        val: Vec::new(),
    };
    for i in 0..cfg.count {
        let sample = generate_scene(&SceneSpec::random(frame_seed(cfg.seed, i), cfg.num_classes), &cfg.rig)?;
        let frame = format!("{i:06}");
        write_sample(root, SEQUENCE, &frame, &sample, &palette)?;
        if i < cfg.count - n_val {
            manifest.train.push(frame);
        } else {
            manifest.val.push(frame);
        }
    }
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        field: "manifest".into(),
        offset: 0,
        reason: e.to_string(),
    })
}

/// Samples of one split (`"train"` or `"val"`).
pub fn read_split(root: &Path, split: &str) -> Result<(Manifest, Vec<PairedSample>)> {
    let m = read_manifest(root)?;
    let frames = match split {
        "train" => &m.train,
        "val" => &m.val,
        "all" => return Ok((m.clone(), m.frames().map(|f| read_sample(root, &m.sequence, f)).collect::<Result<_>>()?)),
        other => return Err(Error::invalid(format!("unknown split {other:?}; expected train, val or all"))),
    };
    let samples = frames.iter().map(|f| read_sample(root, &m.sequence, f)).collect::<Result<_>>()?;
    Ok((m, samples))
}
