//! Spherical projection of LiDAR sweeps into five-channel range images, the
//! point-level augmentations applied before projection, and the KITTI
//! `.bin` / SemanticKITTI `.label` on-disk layouts.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel order of a [`RangeImage`].
pub const CHANNELS: usize = 5;
/// Fill value of every channel at pixels no point projected to.
pub const INVALID_FILL: f32 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn range(&self) -> f64 {
        let (x, y, z) = (self.x as f64, self.y as f64, self.z as f64);
        (x * x + y * y + z * z).sqrt()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::invalid(format!("point {i} has non-finite component {p:?}")));
            }
            if !(0.0..=1.0).contains(&p.intensity) {
                return Err(Error::invalid(format!("point {i} intensity {} outside [0,1]", p.intensity)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    pub width: usize,
    pub height: usize,
    /// Upper edge of the vertical field of view, degrees.
    pub fov_up: f64,
    /// Lower edge of the vertical field of view, degrees (negative below the horizon).
    pub fov_down: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { width: 2048, height: 64, fov_up: 3.0, fov_down: -25.0 }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config(format!("projection size {}x{} must be positive", self.width, self.height)));
        }
        if !(self.fov_up > self.fov_down) || !self.fov_up.is_finite() || !self.fov_down.is_finite() {
            return Err(Error::config(format!(
                "fov_up {} must exceed fov_down {}",
                self.fov_up, self.fov_down
            )));
        }
        if self.fov_up > 90.0 || self.fov_down < -90.0 {
            return Err(Error::config("vertical field of view must lie within [-90, 90] degrees"));
        }
        Ok(())
    }

    /// Continuous column coordinate of an azimuth in radians.
    pub fn column_of(&self, azimuth: f64) -> f64 {
        0.5 * (1.0 - azimuth / std::f64::consts::PI) * self.width as f64
    }

    /// Continuous row coordinate of an elevation in radians.
    pub fn row_of(&self, elevation: f64) -> f64 {
        let (up, down) = (self.fov_up.to_radians(), self.fov_down.to_radians());
        (1.0 - (elevation - down) / (up - down)) * self.height as f64
    }

    /// Pixel of a point, or `None` when it falls outside the vertical window
    /// or sits at the sensor origin.
    pub fn pixel_of(&self, p: &Point) -> Option<(usize, usize)> {
        let r = p.range();
        if r == 0.0 {
            return None;
        }
        let elevation = (p.z as f64 / r).clamp(-1.0, 1.0).asin();
        let (up, down) = (self.fov_up.to_radians(), self.fov_down.to_radians());
        if elevation > up || elevation < down {
            return None;
        }
        let azimuth = (p.y as f64).atan2(p.x as f64);
        let u = clamp_index(self.column_of(azimuth), self.width);
        let v = clamp_index(self.row_of(elevation), self.height);
        Some((u, v))
    }
}

fn clamp_index(coord: f64, len: usize) -> usize {
    let f = coord.floor();
    if f < 0.0 {
        0
    } else {
        (f as usize).min(len - 1)
    }
}

/// Channels `(x, y, z, intensity, range)` stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeImage {
    pub width: usize,
    pub height: usize,
    channels: Vec<f32>,
    mask: Vec<bool>,
    /// Index of the source point that won each pixel.
    source: Vec<Option<usize>>,
}

impl RangeImage {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            channels: vec![INVALID_FILL; CHANNELS * n],
            mask: vec![false; n],
            source: vec![None; n],
        }
    }

    fn offset(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.mask[self.offset(u, v)]
    }

    /// All five channels at column `u`, row `v`.
    pub fn pixel(&self, u: usize, v: usize) -> [f32; CHANNELS] {
        let o = self.offset(u, v);
        let n = self.width * self.height;
        std::array::from_fn(|c| self.channels[c * n + o])
    }

    pub fn range_at(&self, u: usize, v: usize) -> f32 {
        self.pixel(u, v)[4]
    }

    pub fn source_index(&self, u: usize, v: usize) -> Option<usize> {
        self.source[self.offset(u, v)]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn write(&mut self, u: usize, v: usize, p: &Point, range: f64, index: usize) {
        let o = self.offset(u, v);
        let n = self.width * self.height;
        let values = [p.x, p.y, p.z, p.intensity, range as f32];
        for (c, value) in values.into_iter().enumerate() {
            self.channels[c * n + o] = value;
        }
        self.mask[o] = true;
        self.source[o] = Some(index);
    }

    /// Columns `[start, start + len)`.
    pub fn columns(&self, start: usize, len: usize) -> RangeImage {
        let mut out = RangeImage::empty(len, self.height);
        let (n_in, n_out) = (self.width * self.height, len * self.height);
        for v in 0..self.height {
            for du in 0..len {
                let src = v * self.width + start + du;
                let dst = v * len + du;
                for c in 0..CHANNELS {
                    out.channels[c * n_out + dst] = self.channels[c * n_in + src];
                }
                out.mask[dst] = self.mask[src];
                out.source[dst] = self.source[src];
            }
        }
        out
    }

    /// Network input tensor `[5, h, w]`: coordinates and range divided by
    /// `max_range`, intensity unchanged, invalid pixels left at the fill value.
    pub fn to_tensor(&self, max_range: f64) -> Tensor {
        let n = self.width * self.height;
        Tensor::from_fn(&[CHANNELS, self.height, self.width], |i| {
            let (c, o) = (i / n, i % n);
            let v = self.channels[i] as f64;
            if !self.mask[o] || c == 3 {
                v
            } else {
                v / max_range
            }
        })
    }

    /// Per-pixel class of the winning point, `None` where the pixel is empty.
    pub fn labels_from(&self, point_labels: &[u16]) -> Vec<Option<u16>> {
        self.source.iter().map(|s| s.map(|i| point_labels[i])).collect()
    }
}

/// Projects every point onto a `width × height` spherical grid.
///
/// Points outside the vertical window are dropped. When several points land
/// on one pixel the one with the smallest range is kept.
pub fn spherical_project(cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<RangeImage> {
    cfg.validate()?;
    for (i, p) in cloud.points.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::invalid(format!("point {i} has non-finite component {p:?}")));
        }
    }
    let mut img = RangeImage::empty(cfg.width, cfg.height);
    let mut best = vec![f64::INFINITY; cfg.width * cfg.height];
    for (i, p) in cloud.points.iter().enumerate() {
        let Some((u, v)) = cfg.pixel_of(p) else { continue };
        let r = p.range();
        let o = v * cfg.width + u;
        if r < best[o] {
            best[o] = r;
            img.write(u, v, p, r, i);
        }
    }
    Ok(img)
}

/// Mirrors the cloud across the x–z plane (`y ↦ −y`).
pub fn flip_cloud(cloud: &PointCloud) -> PointCloud {
    PointCloud::new(cloud.points.iter().map(|p| Point { y: -p.y, ..*p }).collect())
}

/// Keeps each point independently with probability `1 − fraction`.
pub fn drop_points(cloud: &PointCloud, fraction: f64, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    drop_points_with(cloud, fraction, &mut rng)
}

pub fn drop_points_with<R: Rng>(cloud: &PointCloud, fraction: f64, rng: &mut R) -> Result<PointCloud> {
    Ok(PointCloud::new(drop_mask(cloud.len(), fraction, rng)?.iter().zip(&cloud.points).filter(|(k, _)| **k).map(|(_, p)| *p).collect()))
}

/// Keep/drop decision per point, so paired per-point labels can be filtered alike.
pub fn drop_mask<R: Rng>(n: usize, fraction: f64, rng: &mut R) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("drop fraction {fraction} outside [0,1]")));
    }
    Ok((0..n).map(|_| rng.gen::<f64>() >= fraction).collect())
}

/// Column range `[start, end)` covering `[az_min, az_max]` degrees.
pub fn azimuth_columns(width: usize, azimuth_window: (f64, f64)) -> Result<(usize, usize)> {
    let (lo, hi) = azimuth_window;
    if !(lo < hi) {
        return Err(Error::invalid(format!("azimuth window ({lo}, {hi}) is empty")));
    }
    if lo < -180.0 || hi > 180.0 {
        return Err(Error::invalid(format!("azimuth window ({lo}, {hi}) exceeds [-180, 180]")));
    }
    let col = |deg: f64| 0.5 * (1.0 - deg / 180.0) * width as f64;
    let start = col(hi).round() as usize;
    let end = (col(lo).round() as usize).min(width);
    if end <= start {
        return Err(Error::invalid(format!("azimuth window ({lo}, {hi}) covers no column at width {width}")));
    }
    Ok((start, end))
}

/// Column slice of `img` covering an azimuth window in degrees.
pub fn crop_to_camera_fov(img: &RangeImage, azimuth_window: (f64, f64)) -> Result<RangeImage> {
    let (start, end) = azimuth_columns(img.width, azimuth_window)?;
    Ok(img.columns(start, end - start))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads a KITTI velodyne scan: little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn read_bin(path: &Path) -> Result<PointCloud> {
    let bytes = read_file(path)?;
    parse_bin(&bytes).map_err(|(field, offset, reason)| Error::Parse {
        path: path.to_path_buf(),
        field: field.into(),
        offset,
        reason,
    })
}

fn parse_bin(bytes: &[u8]) -> std::result::Result<PointCloud, (&'static str, u64, String)> {
    const FIELDS: [&str; 4] = ["x", "y", "z", "intensity"];
    if bytes.len() % 16 != 0 {
        let offset = (bytes.len() / 16 * 16) as u64;
        let field = FIELDS[(bytes.len() % 16) / 4];
        return Err((field, offset, format!("truncated point record ({} trailing bytes)", bytes.len() % 16)));
    }
    let points = bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[4 * i], c[4 * i + 1], c[4 * i + 2], c[4 * i + 3]]);
            Point::new(f(0), f(1), f(2), f(3))
        })
        .collect();
    Ok(PointCloud::new(points))
}

pub fn write_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads SemanticKITTI labels: little-endian `u32`, class id in the low 16 bits.
pub fn read_labels(path: &Path) -> Result<Vec<u16>> {
    let bytes = read_file(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            field: "label".into(),
            offset: (bytes.len() / 4 * 4) as u64,
            reason: format!("truncated label record ({} trailing bytes)", bytes.len() % 4),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| (u32::from_le_bytes([c[0], c[1], c[2], c[3]]) & 0xFFFF) as u16)
        .collect())
}

pub fn write_labels(path: &Path, labels: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|&l| (l as u32).to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(w: usize, h: usize) -> ProjectionConfig {
        ProjectionConfig { width: w, height: h, fov_up: 3.0, fov_down: -25.0 }
    }

    #[test]
    fn forward_point_lands_mid_image() {
        let c = ProjectionConfig { width: 512, height: 64, fov_up: 10.0, fov_down: -10.0 };
        let img = spherical_project(&PointCloud::new(vec![Point::new(10.0, 0.0, 0.0, 0.5)]), &c).unwrap();
        assert!(img.is_valid(256, 32));
        assert_eq!(img.range_at(256, 32), 10.0);
        assert_eq!(img.valid_count(), 1);
    }

    #[test]
    fn unit_diagonal_range() {
        let c = ProjectionConfig { width: 64, height: 16, fov_up: 40.0, fov_down: -10.0 };
        let img = spherical_project(&PointCloud::new(vec![Point::new(1.0, 1.0, 1.0, 0.0)]), &c).unwrap();
        let (u, v) = c.pixel_of(&Point::new(1.0, 1.0, 1.0, 0.0)).unwrap();
        assert!((img.range_at(u, v) as f64 - 3f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn nearest_point_wins_collision() {
        let far = Point::new(9.0, 0.0, -0.9, 0.1);
        let near = Point::new(5.0, 0.0, -0.5, 0.9);
        let c = cfg(64, 16);
        let img = spherical_project(&PointCloud::new(vec![far, near]), &c).unwrap();
        let (u, v) = c.pixel_of(&near).unwrap();
        assert_eq!(c.pixel_of(&far), Some((u, v)));
        assert!((img.range_at(u, v) as f64 - near.range()).abs() < 1e-6);
        assert_eq!(img.source_index(u, v), Some(1));
        assert_eq!(img.pixel(u, v)[3], 0.9);
    }

    #[test]
    fn out_of_window_points_dropped_and_empty_is_all_invalid() {
        let c = cfg(64, 16);
        let up = Point::new(1.0, 0.0, 1.0, 0.0);
        let img = spherical_project(&PointCloud::new(vec![up]), &c).unwrap();
        assert_eq!(img.valid_count(), 0);
        let img = spherical_project(&PointCloud::default(), &c).unwrap();
        assert_eq!(img.valid_count(), 0);
        assert!(img.pixel(3, 3).iter().all(|&v| v == INVALID_FILL));
    }

    #[test]
    fn non_finite_rejected() {
        let bad = PointCloud::new(vec![Point::new(f32::NAN, 0.0, 0.0, 0.0)]);
        assert!(matches!(spherical_project(&bad, &cfg(8, 8)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn flip_examples() {
        let c = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0, 0.4)]);
        assert_eq!(flip_cloud(&c).points[0], Point::new(1.0, -2.0, 3.0, 0.4));
        assert_eq!(flip_cloud(&flip_cloud(&c)), c);
    }

    #[test]
    fn drop_examples() {
        let cloud = PointCloud::new((0..10_000).map(|i| Point::new(i as f32, 1.0, 0.0, 0.0)).collect());
        assert_eq!(drop_points(&cloud, 0.0, 3).unwrap(), cloud);
        assert!(drop_points(&cloud, 1.0, 3).unwrap().is_empty());
        let half = drop_points(&cloud, 0.5, 3).unwrap().len();
        assert!((4700..=5300).contains(&half), "kept {half}");
        assert_eq!(drop_points(&cloud, 0.5, 3).unwrap(), drop_points(&cloud, 0.5, 3).unwrap());
        assert!(drop_points(&cloud, 1.5, 3).is_err());
        assert!(drop_points(&cloud, -0.1, 3).is_err());
    }

    #[test]
    fn crop_examples() {
        let img = RangeImage::empty(512, 4);
        assert_eq!(crop_to_camera_fov(&img, (-180.0, 180.0)).unwrap().width, 512);
        assert_eq!(crop_to_camera_fov(&img, (0.0, 180.0)).unwrap().width, 256);
        assert_eq!(azimuth_columns(512, (-45.0, 45.0)).unwrap(), (192, 320));
        assert!(crop_to_camera_fov(&img, (10.0, 10.0)).is_err());
        assert!(crop_to_camera_fov(&img, (-200.0, 10.0)).is_err());
    }

    #[test]
    fn crop_keeps_forward_point() {
        let c = ProjectionConfig { width: 512, height: 8, fov_up: 10.0, fov_down: -10.0 };
        let img = spherical_project(&PointCloud::new(vec![Point::new(10.0, 0.0, 0.0, 0.5)]), &c).unwrap();
        let crop = crop_to_camera_fov(&img, (-45.0, 45.0)).unwrap();
        assert!(crop.is_valid(64, 4));
        assert_eq!(crop.valid_count(), 1);
    }

    #[test]
    fn bin_and_label_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(vec![Point::new(1.5, -2.0, 0.25, 0.75), Point::new(-3.0, 4.0, 1.0, 0.0)]);
        let p = dir.path().join("a.bin");
        write_bin(&p, &cloud).unwrap();
        assert_eq!(read_bin(&p).unwrap(), cloud);
        std::fs::write(&p, [0u8; 22]).unwrap();
        match read_bin(&p) {
            Err(Error::Parse { field, offset, .. }) => {
                assert_eq!(field, "y");
                assert_eq!(offset, 16);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let l = dir.path().join("a.label");
        std::fs::write(&l, [7u8, 0, 9, 9, 1, 0]).unwrap();
        assert!(matches!(read_labels(&l), Err(Error::Parse { .. })));
        std::fs::write(&l, [7u8, 0, 9, 9]).unwrap();
        assert_eq!(read_labels(&l).unwrap(), vec![7]);
        write_labels(&l, &[3, 65535]).unwrap();
        assert_eq!(read_labels(&l).unwrap(), vec![3, 65535]);
    }
}
