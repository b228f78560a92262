//! Camera-frame image types and their PNG encodings.
//!
//! Segment maps are stored as palette PNGs whose pixel indices are the class
//! ids. Depth maps are 16-bit grayscale with a linear scale factor kept in a
//! `depth_scale` text chunk: `depth = value · scale`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Label value for pixels that carry no class.
pub const IGNORE: u8 = 255;

const DEPTH_SCALE_KEY: &str = "depth_scale";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl SegmentMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(format!("{} labels for a {width}x{height} map", labels.len())));
        }
        Ok(Self { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, class: u8) -> Self {
        Self { width, height, labels: vec![class; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.labels[v * self.width + u]
    }

    /// Left-right mirror.
    pub fn mirrored(&self) -> Self {
        Self { labels: mirror_rows(&self.labels, self.width), ..self.clone() }
    }

    /// One-hot planes `[C, h, w]`; ignored pixels are all-zero.
    pub fn one_hot(&self, classes: usize) -> Tensor {
        let n = self.width * self.height;
        let mut t = Tensor::zeros(&[classes, self.height, self.width]);
        for (i, &l) in self.labels.iter().enumerate() {
            if (l as usize) < classes {
                t.data_mut()[l as usize * n + i] = 1.0;
            }
        }
        t
    }

    /// Nearest-neighbour resample to `width × height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        let labels = (0..width * height)
            .map(|i| {
                let (u, v) = (i % width, i / width);
                let su = nearest_source(u, width, self.width);
                let sv = nearest_source(v, height, self.height);
                self.get(su, sv)
            })
            .collect();
        Self { width, height, labels }
    }
}

fn nearest_source(i: usize, out: usize, inp: usize) -> usize {
    (((i as f64 + 0.5) * inp as f64 / out as f64).floor() as usize).min(inp - 1)
}

fn mirror_rows<T: Clone>(data: &[T], width: usize) -> Vec<T> {
    data.chunks(width).flat_map(|row| row.iter().rev().cloned()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(format!("{} depths for a {width}x{height} map", values.len())));
        }
        Ok(Self { width, height, values })
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn mirrored(&self) -> Self {
        Self { values: mirror_rows(&self.values, self.width), ..self.clone() }
    }

    /// `(min, max)` over strictly positive pixels.
    pub fn positive_range(&self) -> Option<(f64, f64)> {
        self.values.iter().filter(|&&d| d > 0.0).fold(None, |acc, &d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    /// Rec. 601 luma in `[0, 1]`.
    pub fn luminance(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect()
    }

    /// Channel planes `[3, h, w]` scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let n = self.width * self.height;
        Tensor::from_fn(&[3, self.height, self.width], |i| self.pixels[i % n][i / n] as f64 / 255.0)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn png_err(path: &Path, field: &str, e: impl std::fmt::Display) -> Error {
    Error::Parse { path: path.to_path_buf(), field: field.into(), offset: 0, reason: e.to_string() }
}

fn open_png(path: &Path) -> Result<(png::Reader<std::io::BufReader<File>>, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, "header", e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    reader.next_frame(&mut buf).map_err(|e| png_err(path, "image data", e))?;
    Ok((reader, buf))
}

/// Writes class ids as palette indices, colored with `palette`.
pub fn write_segment_png(path: &Path, seg: &SegmentMap, palette: &[[u8; 3]]) -> Result<()> {
    let mut enc = png::Encoder::new(create(path)?, seg.width as u32, seg.height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    let mut table = vec![0u8; 256 * 3];
    for (i, c) in palette.iter().take(256).enumerate() {
        table[3 * i..3 * i + 3].copy_from_slice(c);
    }
    enc.set_palette(table);
    let mut w = enc.write_header().map_err(|e| png_err(path, "header", e))?;
    w.write_image_data(&seg.labels).map_err(|e| png_err(path, "image data", e))?;
    w.finish().map_err(|e| png_err(path, "image data", e))
}

pub fn read_segment_png(path: &Path) -> Result<SegmentMap> {
    let (reader, buf) = open_png(path)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed && info.color_type != png::ColorType::Grayscale
        || info.bit_depth != png::BitDepth::Eight
    {
        return Err(png_err(path, "color type", "segment maps must be 8-bit indexed"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    SegmentMap::new(w, h, buf[..w * h].to_vec())
}

/// Writes a 16-bit depth PNG. The scale maps the largest depth to 65535.
pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<f64> {
    let max = depth.values.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { max / 65535.0 } else { 1.0 };
    let mut enc = png::Encoder::new(create(path)?, depth.width as u32, depth.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    enc.add_text_chunk(DEPTH_SCALE_KEY.into(), format!("{scale:e}"))
        .map_err(|e| png_err(path, DEPTH_SCALE_KEY, e))?;
    let mut w = enc.write_header().map_err(|e| png_err(path, "header", e))?;
    let bytes: Vec<u8> = depth
        .values
        .iter()
        .flat_map(|&d| ((d.max(0.0) / scale).round().min(65535.0) as u16).to_be_bytes())
        .collect();
    w.write_image_data(&bytes).map_err(|e| png_err(path, "image data", e))?;
    w.finish().map_err(|e| png_err(path, "image data", e))?;
    Ok(scale)
}

pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let (reader, buf) = open_png(path)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(png_err(path, "color type", "depth maps must be 16-bit grayscale"));
    }
    let scale: f64 = info
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == DEPTH_SCALE_KEY)
        .ok_or_else(|| png_err(path, DEPTH_SCALE_KEY, "missing depth scale chunk"))?
        .text
        .parse()
        .map_err(|e| png_err(path, DEPTH_SCALE_KEY, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let values = buf[..w * h * 2].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale).collect();
    DepthMap::new(w, h, values)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut enc = png::Encoder::new(create(path)?, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| png_err(path, "header", e))?;
    let bytes: Vec<u8> = img.pixels.iter().flatten().copied().collect();
    w.write_image_data(&bytes).map_err(|e| png_err(path, "image data", e))?;
    w.finish().map_err(|e| png_err(path, "image data", e))
}

/// Painted segments with depth in the alpha channel, scaled so the largest
/// depth maps to 255.
pub fn write_rgbd_png(path: &Path, img: &RgbImage, depth: &DepthMap) -> Result<()> {
    if (img.width, img.height) != (depth.width, depth.height) {
        return Err(Error::shape(format!(
            "image {}x{} and depth {}x{} differ",
            img.width, img.height, depth.width, depth.height
        )));
    }
    let max = depth.values.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut enc = png::Encoder::new(create(path)?, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| png_err(path, "header", e))?;
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .zip(&depth.values)
        .flat_map(|(p, &d)| [p[0], p[1], p[2], (d.max(0.0) * scale).round().min(255.0) as u8])
        .collect();
    w.write_image_data(&bytes).map_err(|e| png_err(path, "image data", e))?;
    w.finish().map_err(|e| png_err(path, "image data", e))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let (reader, buf) = open_png(path)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(path, "color type", "expected 8-bit RGB"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels = buf[..w * h * 3].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(RgbImage { width: w, height: h, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        let seg = SegmentMap::new(3, 2, vec![0, 1, 2, 3, IGNORE, 1]).unwrap();
        write_segment_png(&p, &seg, &[[1, 2, 3], [4, 5, 6]]).unwrap();
        assert_eq!(read_segment_png(&p).unwrap(), seg);
    }

    #[test]
    fn depth_png_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let depth = DepthMap::new(4, 2, vec![0.0, 1.234, 5.5, 12.0, 33.3, 47.77, 0.01, 80.0]).unwrap();
        let scale = write_depth_png(&p, &depth).unwrap();
        let back = read_depth_png(&p).unwrap();
        for (a, b) in depth.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= scale / 2.0 + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn corrupt_png_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"\x89PNG\r\n\x1a\nxx").unwrap();
        assert!(matches!(read_segment_png(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn one_hot_and_nearest_resize() {
        let seg = SegmentMap::new(2, 1, vec![1, IGNORE]).unwrap();
        let oh = seg.one_hot(2);
        assert_eq!(oh.data(), &[0.0, 0.0, 1.0, 0.0]);
        let up = seg.resize_nearest(4, 2);
        assert_eq!(up.labels, vec![1, 1, IGNORE, IGNORE, 1, 1, IGNORE, IGNORE]);
        assert_eq!(seg.mirrored().labels, vec![IGNORE, 1]);
    }
}
