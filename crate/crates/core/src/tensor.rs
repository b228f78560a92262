//! Dense row-major `f64` tensors and the numeric kernels the autodiff graph
//! is built from.
//!
//! Every kernel here is deterministic and single-threaded: reductions always
//! run in the same order, so identical inputs give bit-identical outputs.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

/// Geometry of a 2D convolution window, shared by `im2col` and `col2im`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Output columns `[lo, hi)` whose kernel tap `kj` lands inside the input row.
fn valid_columns(g: &ConvGeom, kj: usize, wo: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride);
    let hi = if g.width + g.pad > kj { ((g.width + g.pad - kj - 1) / g.stride + 1).min(wo) } else { 0 };
    (lo, hi.max(lo))
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `shape` viewed inside the (right-aligned) broadcast shape `out`,
/// with zero stride along broadcast dimensions.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// NumPy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Calls `f(offset_a, offset_b)` for every position of `out` in row-major order.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..total {
        f(oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), self.data.len(), "cannot reshape {:?} to {shape:?}", self.shape);
        Self { shape: shape.to_vec(), data: self.data.clone() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Elementwise binary op with broadcasting.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Self { shape: self.shape.clone(), data };
        }
        if other.data.len() == 1 && other.shape.len() <= self.shape.len() {
            let b = other.data[0];
            return self.map(|a| f(a, b));
        }
        let out = broadcast_shape(&self.shape, &other.shape).unwrap_or_else(|| {
            panic!("shapes {:?} and {:?} do not broadcast", self.shape, other.shape)
        });
        let sa = broadcast_strides(&self.shape, &out);
        let sb = broadcast_strides(&other.shape, &out);
        let mut data = Vec::with_capacity(numel(&out));
        for_each_broadcast(&out, &sa, &sb, |ia, ib| data.push(f(self.data[ia], other.data[ib])));
        Self { shape: out, data }
    }

    pub fn add(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Reduces broadcast dimensions so the result has `target` shape.
    pub fn sum_to(&self, target: &[usize]) -> Self {
        if self.shape == target {
            return self.clone();
        }
        debug_assert_eq!(
            broadcast_shape(target, &self.shape).as_deref(),
            Some(self.shape.as_slice()),
            "{target:?} is not a broadcast source of {:?}",
            self.shape
        );
        let mut data = vec![0.0; numel(target)];
        if data.len() == 1 {
            data[0] = self.sum();
            return Self { shape: target.to_vec(), data };
        }
        let st = broadcast_strides(target, &self.shape);
        let own = strides(&self.shape);
        for_each_broadcast(&self.shape, &own, &st, |i, t| data[t] += self.data[i]);
        Self { shape: target.to_vec(), data }
    }

    pub fn broadcast_to(&self, target: &[usize]) -> Self {
        if self.shape == target {
            return self.clone();
        }
        let sa = broadcast_strides(&self.shape, target);
        let zeros = vec![0; target.len()];
        let mut data = Vec::with_capacity(numel(target));
        for_each_broadcast(target, &sa, &zeros, |i, _| data.push(self.data[i]));
        Self { shape: target.to_vec(), data }
    }

    /// Maximum along `axis`, keeping the axis with length one.
    pub fn max_axis_keepdim(&self, axis: usize) -> Self {
        let (outer, len, inner) = self.split_axis(axis);
        let mut out_shape = self.shape.clone();
        out_shape[axis] = 1;
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    let v = self.data[base + i];
                    let slot = &mut data[o * inner + i];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
        Self { shape: out_shape, data }
    }

    /// Index of the maximum along `axis` (first wins on ties), axis removed.
    pub fn argmax_axis(&self, axis: usize) -> Vec<usize> {
        let (outer, len, inner) = self.split_axis(axis);
        let mut best = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut arg = 0;
                let mut value = f64::NEG_INFINITY;
                for l in 0..len {
                    let v = self.data[(o * len + l) * inner + i];
                    if v > value {
                        value = v;
                        arg = l;
                    }
                }
                best[o * inner + i] = arg;
            }
        }
        best
    }

    fn split_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = numel(&self.shape[..axis]);
        let len = self.shape[axis];
        let inner = numel(&self.shape[axis + 1..]);
        (outer, len, inner)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let (outer, full, inner) = self.split_axis(axis);
        assert!(start + len <= full, "narrow {start}+{len} exceeds axis length {full}");
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self { shape, data }
    }

    /// Zero-pads along `axis` so this tensor occupies `[start, start+len)` of
    /// an axis of length `full`. Adjoint of [`Tensor::narrow`].
    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Self {
        let (outer, len, inner) = self.split_axis(axis);
        assert!(start + len <= full);
        let mut data = vec![0.0; outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            let src = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&self.data[src..src + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = full;
        Self { shape, data }
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Self {
        assert!(!parts.is_empty());
        let first = parts[0].shape();
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut total = 0;
        for p in parts {
            assert_eq!(p.shape.len(), first.len());
            assert_eq!(&p.shape[..axis], &first[..axis], "concat shape mismatch");
            assert_eq!(&p.shape[axis + 1..], &first[axis + 1..], "concat shape mismatch");
            total += p.shape[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        Self { shape, data }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Self {
        assert!(!parts.is_empty());
        let inner = parts[0].shape.clone();
        let mut data = Vec::with_capacity(parts.len() * numel(&inner));
        for p in parts {
            assert_eq!(p.shape, inner, "stack shape mismatch");
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        Self { shape, data }
    }

    pub fn transpose2d(&self) -> Self {
        assert_eq!(self.shape.len(), 2);
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Self { shape: vec![n, m], data }
    }

    /// `w [M,K]` applied to every batch item of `x [B,K,L]`, giving `[B,M,L]`.
    pub fn matmul_left(w: &Tensor, x: &Tensor) -> Self {
        assert_eq!(w.shape.len(), 2);
        assert_eq!(x.shape.len(), 3);
        let (m, k) = (w.shape[0], w.shape[1]);
        let (b, k2, l) = (x.shape[0], x.shape[1], x.shape[2]);
        assert_eq!(k, k2, "matmul_left inner dims {k} vs {k2}");
        let mut out = vec![0.0; b * m * l];
        for bi in 0..b {
            gemm(
                m,
                k,
                l,
                &w.data,
                (k, 1),
                &x.data[bi * k * l..],
                (l, 1),
                &mut out[bi * m * l..],
                (l, 1),
            );
        }
        Self { shape: vec![b, m, l], data: out }
    }

    /// `sum_b a[b] · b[b]ᵀ` for `a [B,M,L]`, `b [B,K,L]`, giving `[M,K]`.
    pub fn outer_sum(a: &Tensor, b: &Tensor) -> Self {
        assert_eq!(a.shape.len(), 3);
        assert_eq!(b.shape.len(), 3);
        let (bn, m, l) = (a.shape[0], a.shape[1], a.shape[2]);
        assert_eq!(b.shape[0], bn);
        assert_eq!(b.shape[2], l);
        let k = b.shape[1];
        let mut out = vec![0.0; m * k];
        for bi in 0..bn {
            // out[m,k] += a[m,l] * b[k,l]^T, with b read transposed through strides.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    l,
                    k,
                    1.0,
                    a.data[bi * m * l..].as_ptr(),
                    l as isize,
                    1,
                    b.data[bi * k * l..].as_ptr(),
                    1,
                    l as isize,
                    1.0,
                    out.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
        }
        Self { shape: vec![m, k], data: out }
    }

    /// Unfolds sliding windows of `x [B,C,H,W]` into `[B, C·k·k, Ho·Wo]`.
    pub fn im2col(&self, g: &ConvGeom) -> Self {
        let b = self.shape[0];
        assert_eq!(&self.shape[1..], &[g.channels, g.height, g.width], "im2col geometry mismatch");
        let (ho, wo) = (g.out_height(), g.out_width());
        let rows = g.col_rows();
        let cols = ho * wo;
        let mut out = vec![0.0; b * rows * cols];
        let plane = g.height * g.width;
        for bi in 0..b {
            let src = &self.data[bi * g.channels * plane..(bi + 1) * g.channels * plane];
            let dst = &mut out[bi * rows * cols..(bi + 1) * rows * cols];
            for c in 0..g.channels {
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let row = (c * g.kernel + ki) * g.kernel + kj;
                        let drow = &mut dst[row * cols..(row + 1) * cols];
                        for oy in 0..ho {
                            let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            let srow = &src[c * plane + iy as usize * g.width..][..g.width];
                            let (lo, hi) = valid_columns(g, kj, wo);
                            let out_row = &mut drow[oy * wo..(oy + 1) * wo];
                            if g.stride == 1 {
                                let start = lo + kj - g.pad;
                                out_row[lo..hi].copy_from_slice(&srow[start..start + hi - lo]);
                            } else {
                                for ox in lo..hi {
                                    out_row[ox] = srow[ox * g.stride + kj - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        Self { shape: vec![b, rows, cols], data: out }
    }

    /// Adjoint of [`Tensor::im2col`]: folds `[B, C·k·k, Ho·Wo]` back into
    /// `[B,C,H,W]`, summing overlapping contributions.
    pub fn col2im(&self, g: &ConvGeom) -> Self {
        let b = self.shape[0];
        let (ho, wo) = (g.out_height(), g.out_width());
        let rows = g.col_rows();
        let cols = ho * wo;
        assert_eq!(&self.shape[1..], &[rows, cols], "col2im geometry mismatch");
        let plane = g.height * g.width;
        let mut out = vec![0.0; b * g.channels * plane];
        for bi in 0..b {
            let src = &self.data[bi * rows * cols..(bi + 1) * rows * cols];
            let dst = &mut out[bi * g.channels * plane..(bi + 1) * g.channels * plane];
            for c in 0..g.channels {
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let row = (c * g.kernel + ki) * g.kernel + kj;
                        let srow = &src[row * cols..(row + 1) * cols];
                        for oy in 0..ho {
                            let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            let drow = &mut dst[c * plane + iy as usize * g.width..][..g.width];
                            let (lo, hi) = valid_columns(g, kj, wo);
                            let in_row = &srow[oy * wo..(oy + 1) * wo];
                            for ox in lo..hi {
                                drow[ox * g.stride + kj - g.pad] += in_row[ox];
                            }
                        }
                    }
                }
            }
        }
        Self { shape: vec![b, g.channels, g.height, g.width], data: out }
    }

    /// Applies `rows [Ho,H]` and `cols [Wo,W]` to every plane of
    /// `x [B,C,H,W]`: `out = rows · x · colsᵀ`.
    pub fn separable_map(&self, rows: &Tensor, cols: &Tensor) -> Self {
        assert_eq!(self.shape.len(), 4);
        let (b, c, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let (ho, h2) = (rows.shape[0], rows.shape[1]);
        let (wo, w2) = (cols.shape[0], cols.shape[1]);
        assert_eq!((h, w), (h2, w2), "separable map expects {h2}x{w2} planes, got {h}x{w}");
        let planes = b * c;
        // tmp[(p,h), wo] = x[(p,h), w] · cols^T
        let mut tmp = vec![0.0; planes * h * wo];
        gemm(planes * h, w, wo, &self.data, (w, 1), &cols.data, (1, w), &mut tmp, (wo, 1));
        let mut out = vec![0.0; planes * ho * wo];
        for p in 0..planes {
            gemm(
                ho,
                h,
                wo,
                &rows.data,
                (h, 1),
                &tmp[p * h * wo..],
                (wo, 1),
                &mut out[p * ho * wo..],
                (wo, 1),
            );
        }
        Self { shape: vec![b, c, ho, wo], data: out }
    }
}

/// `c = a · b` with explicit (row, col) strides; `c` is overwritten.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
    sc: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * sa.0 + k.saturating_sub(1) * sa.1 + usize::from(k > 0));
    assert!(b.len() >= k.saturating_sub(1) * sb.0 + (n - 1) * sb.1 + usize::from(k > 0));
    assert!(c.len() >= (m - 1) * sc.0 + (n - 1) * sc.1 + 1);
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}
