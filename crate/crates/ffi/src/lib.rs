//! C ABI over `titan-core`.
//!
//! Every fallible function returns a [`TitanStatus`]. On failure the message
//! is kept per thread and read with [`titan_last_error`]. Generators live
//! behind the opaque [`TitanGenerator`] handle, freed with
//! [`titan_generator_free`]. Arrays are caller-allocated with explicit
//! lengths; images are row-major and tensors channel-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use titan_core::autodiff::{no_grad, Var};
use titan_core::checkpoint::load_generator;
use titan_core::image::{DepthMap, SegmentMap};
use titan_core::metrics::{confusion, depth_metrics, iou};
use titan_core::network::Generator;
use titan_core::nn::ParamStore;
use titan_core::projection::{spherical_project, Point, PointCloud, ProjectionConfig, CHANNELS};
use titan_core::tensor::Tensor;
use titan_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TitanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Numeric = 6,
    Undefined = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TitanStatus {
    match e {
        Error::Io { .. } => TitanStatus::Io,
        Error::Parse { .. } => TitanStatus::Parse,
        Error::Shape(_) => TitanStatus::Shape,
        Error::Numeric(_) | Error::Divergence { .. } | Error::NonFinite { .. } => TitanStatus::Numeric,
        Error::Undefined(_) => TitanStatus::Undefined,
        Error::InvalidInput(_) | Error::Config(_) => TitanStatus::InvalidArgument,
    }
}

struct Failure(TitanStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: TitanStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TitanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TitanStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            TitanStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(TitanStatus::NullPointer, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, need: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len < need {
        return Err(fail(TitanStatus::Shape, format!("{name} holds {len} values, {need} needed")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(TitanStatus::NullPointer, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn titan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Nul-terminated crate version.
#[no_mangle]
pub extern "C" fn titan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Vertical field of view and grid of a spherical projection.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TitanProjection {
    pub width: usize,
    pub height: usize,
    pub fov_up_deg: f64,
    pub fov_down_deg: f64,
}

/// Projects `n_points` interleaved `(x, y, z, intensity)` points.
///
/// `out_channels` receives `5 * width * height` values, channel-major in the
/// order x, y, z, intensity, range, with -1 in empty pixels. `out_mask`
/// receives `width * height` flags, 1 where a point landed.
///
/// # Safety
/// Pointers must reference at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn titan_project_cloud(
    points: *const f32,
    n_points: usize,
    cfg: *const TitanProjection,
    out_channels: *mut f32,
    out_channels_len: usize,
    out_mask: *mut u8,
    out_mask_len: usize,
) -> TitanStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| fail(TitanStatus::NullPointer, "cfg is null"))?;
        let raw = input(points, n_points.checked_mul(4).ok_or_else(|| fail(TitanStatus::InvalidArgument, "n_points overflows"))?, "points")?;
        let cloud = PointCloud::new(raw.chunks_exact(4).map(|p| Point::new(p[0], p[1], p[2], p[3])).collect());
        let pc = ProjectionConfig { width: cfg.width, height: cfg.height, fov_up: cfg.fov_up_deg, fov_down: cfg.fov_down_deg };
        let img = spherical_project(&cloud, &pc)?;
        let n = pc.width * pc.height;
        let ch = output(out_channels, out_channels_len, CHANNELS * n, "out_channels")?;
        let mask = output(out_mask, out_mask_len, n, "out_mask")?;
        for v in 0..pc.height {
            for u in 0..pc.width {
                let o = v * pc.width + u;
                for (c, value) in img.pixel(u, v).into_iter().enumerate() {
                    ch[c * n + o] = value;
                }
                mask[o] = img.is_valid(u, v) as u8;
            }
        }
        Ok(())
    })
}

/// A loaded generator and its weights.
pub struct TitanGenerator {
    generator: Generator,
    params: ParamStore,
}

/// Loads a generator checkpoint into `*out`.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn titan_generator_load(path: *const c_char, out: *mut *mut TitanGenerator) -> TitanStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(TitanStatus::NullPointer, "path and out must be non-null"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path).to_str().map_err(|e| fail(TitanStatus::InvalidArgument, format!("path is not UTF-8: {e}")))?;
        let (generator, params) = load_generator(Path::new(path))?;
        *out = Box::into_raw(Box::new(TitanGenerator { generator, params }));
        Ok(())
    })
}

/// Frees a handle from [`titan_generator_load`]; null is ignored.
///
/// # Safety
/// `g` must come from [`titan_generator_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn titan_generator_free(g: *mut TitanGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Input tensor shape `[channels, height, width]`, output image size and
/// whether a depth map is produced.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TitanGeneratorInfo {
    pub num_classes: usize,
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub has_depth: bool,
    pub param_count: usize,
}

/// # Safety
/// `g` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn titan_generator_info(g: *const TitanGenerator, out: *mut TitanGeneratorInfo) -> TitanStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| fail(TitanStatus::NullPointer, "generator is null"))?;
        let out = out.as_mut().ok_or_else(|| fail(TitanStatus::NullPointer, "out is null"))?;
        let c = g.generator.config();
        *out = TitanGeneratorInfo {
            num_classes: c.num_classes,
            in_channels: c.in_channels(),
            in_height: c.input_size.1,
            in_width: c.input_size.0,
            out_height: c.output_size.1,
            out_width: c.output_size.0,
            has_depth: c.depth_head,
            param_count: g.params.count(),
        };
        Ok(())
    })
}

/// Runs one sample. `input` is the `[in_channels, in_height, in_width]`
/// network input. `out_segments` receives `out_width * out_height` class
/// ids. `out_depth` may be null; otherwise it receives the depth map in the
/// `[0, 1]` training scale.
///
/// # Safety
/// Pointers must reference at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn titan_generator_infer(
    g: *const TitanGenerator,
    input_data: *const f64,
    input_len: usize,
    out_segments: *mut u8,
    out_segments_len: usize,
    out_depth: *mut f64,
    out_depth_len: usize,
) -> TitanStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| fail(TitanStatus::NullPointer, "generator is null"))?;
        let c = g.generator.config();
        let shape = [1, c.in_channels(), c.input_size.1, c.input_size.0];
        let need: usize = shape.iter().product();
        if input_len != need {
            return Err(fail(TitanStatus::Shape, format!("input holds {input_len} values, {need} expected")));
        }
        let data = input(input_data, input_len, "input")?;
        let n = c.output_size.0 * c.output_size.1;
        let seg = output(out_segments, out_segments_len, n, "out_segments")?;
        let p = g.params.bind(false);
        let x = Var::constant(Tensor::new(shape.to_vec(), data.to_vec()));
        let o = no_grad(|| g.generator.forward(&p, &x, None))?;
        for (s, l) in seg.iter_mut().zip(o.logits.value().argmax_axis(1)) {
            *s = l as u8;
        }
        if !out_depth.is_null() {
            let d = o.depth.as_ref().ok_or_else(|| fail(TitanStatus::InvalidArgument, "generator has no depth head"))?;
            let dst = output(out_depth, out_depth_len, n, "out_depth")?;
            dst[..n].copy_from_slice(d.value().data());
        }
        Ok(())
    })
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TitanDepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub rms_log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// Depth errors over `n` pixels. `mask` may be null to score pixels with
/// positive ground truth; otherwise nonzero entries are scored.
///
/// # Safety
/// Pointers must reference at least `n` elements.
#[no_mangle]
pub unsafe extern "C" fn titan_depth_metrics(
    pred: *const f64,
    gt: *const f64,
    mask: *const u8,
    n: usize,
    out: *mut TitanDepthMetrics,
) -> TitanStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| fail(TitanStatus::NullPointer, "out is null"))?;
        let p = DepthMap::new(n, 1, input(pred, n, "pred")?.to_vec())?;
        let g = DepthMap::new(n, 1, input(gt, n, "gt")?.to_vec())?;
        let m: Option<Vec<bool>> = if mask.is_null() { None } else { Some(input(mask, n, "mask")?.iter().map(|&b| b != 0).collect()) };
        let d = depth_metrics(&p, &g, m.as_deref())?;
        *out = TitanDepthMetrics {
            abs_rel: d.abs_rel,
            sq_rel: d.sq_rel,
            rms: d.rms,
            rms_log10: d.rms_log10,
            delta1: d.delta1,
            delta2: d.delta2,
            delta3: d.delta3,
        };
        Ok(())
    })
}

/// Mean IoU of `n` predicted labels against ground truth; ground-truth
/// pixels labeled 255 are ignored. `per_class` may be null; otherwise it
/// receives `classes` values with NaN for classes absent from both.
///
/// # Safety
/// Pointers must reference at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn titan_miou(
    pred: *const u8,
    gt: *const u8,
    n: usize,
    classes: usize,
    out_miou: *mut f64,
    per_class: *mut f64,
    per_class_len: usize,
) -> TitanStatus {
    guard(|| {
        let out = out_miou.as_mut().ok_or_else(|| fail(TitanStatus::NullPointer, "out_miou is null"))?;
        if classes == 0 {
            return Err(fail(TitanStatus::InvalidArgument, "classes must be positive"));
        }
        let p = SegmentMap::new(n, 1, input(pred, n, "pred")?.to_vec())?;
        let g = SegmentMap::new(n, 1, input(gt, n, "gt")?.to_vec())?;
        let r = iou(&confusion(&p, &g, classes)?);
        if !per_class.is_null() {
            let dst = output(per_class, per_class_len, classes, "per_class")?;
            for (d, v) in dst.iter_mut().zip(&r.per_class) {
                *d = v.unwrap_or(f64::NAN);
            }
        }
        *out = r.miou;
        Ok(())
    })
}
