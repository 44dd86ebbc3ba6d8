//! Forward and backward kernels over raw NCHW buffers.
//!
//! Convolutions lower to im2col + GEMM one batch item at a time. Per-item
//! weight and bias gradients are reduced afterwards in batch order, so results
//! are identical for every thread count. Convolutions with tiny outputs use a
//! single GEMM over the whole batch instead, which runs on the calling thread.

use crate::error::{Error, Result};
use crate::parallel;
use crate::scalar::Scalar;

/// Stride and (possibly asymmetric) zero padding of a square-kernel
/// convolution. Padding applies identically to rows and columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad_begin: usize,
    pub pad_end: usize,
}

impl ConvSpec {
    pub fn symmetric(stride: usize, padding: usize) -> Self {
        ConvSpec {
            stride,
            pad_begin: padding,
            pad_end: padding,
        }
    }

    /// Padding that makes a stride-`s` convolution map `n` to `n / s`,
    /// splitting any odd total with the extra row at the end.
    pub fn same(kernel: usize, stride: usize) -> Self {
        let total = kernel.saturating_sub(stride);
        ConvSpec {
            stride,
            pad_begin: total / 2,
            pad_end: total - total / 2,
        }
    }

    /// Output extent along one axis; the division must be exact.
    pub fn output_len(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::shape("stride must be positive"));
        }
        let padded = input + self.pad_begin + self.pad_end;
        if padded < kernel {
            return Err(Error::shape(format!(
                "kernel {kernel} larger than padded input {padded}"
            )));
        }
        let span = padded - kernel;
        if !span.is_multiple_of(self.stride) {
            return Err(Error::shape(format!(
                "non-integral output size: ({input} + {} + {} - {kernel}) / {} is not exact",
                self.pad_begin, self.pad_end, self.stride
            )));
        }
        Ok(span / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub spec: ConvSpec,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Valid output index range `[lo, hi)` for kernel offset `k` along an axis
    /// of length `len` producing `out` samples.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.spec.stride;
        let pb = self.spec.pad_begin;
        // need 0 <= o*s + k - pb < len
        let lo = if k >= pb { 0 } else { (pb - k).div_ceil(s) };
        let hi = if len + pb > k {
            ((len + pb - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

pub(crate) fn im2col<T: Scalar>(input: &[T], g: &Geometry, col: &mut [T]) {
    let (k, s, pb) = (g.kernel, g.spec.stride, g.spec.pad_begin);
    let cols = g.col_cols();
    col.fill(T::zero());
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.height, g.out_h);
            for kj in 0..k {
                let (ox_lo, ox_hi) = g.valid_range(kj, g.width, g.out_w);
                if ox_lo == ox_hi {
                    continue;
                }
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ki - pb;
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if s == 1 {
                        let ix0 = ox_lo + kj - pb;
                        out_row[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            out_row[ox] = src[ox * s + kj - pb];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im<T: Scalar>(col: &[T], g: &Geometry, output: &mut [T]) {
    let (k, s, pb) = (g.kernel, g.spec.stride, g.spec.pad_begin);
    let cols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut output[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            let (oy_lo, oy_hi) = g.valid_range(ki, g.height, g.out_h);
            for kj in 0..k {
                let (ox_lo, ox_hi) = g.valid_range(kj, g.width, g.out_w);
                let row = (c * k + ki) * k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ki - pb;
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    for ox in ox_lo..ox_hi {
                        dst[ox * s + kj - pb] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

/// Shapes of a forward convolution: input `[b, c, h, w]`, kernel
/// `[o, c, k, k]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub spec: ConvSpec,
}

impl ConvShape {
    pub fn new(input: &[usize], kernel: &[usize], spec: ConvSpec) -> Result<Self> {
        let (b, c, h, w) = four(input, "conv input")?;
        let (o, kc, kh, kw) = four(kernel, "conv kernel")?;
        if kc != c {
            return Err(Error::shape(format!(
                "kernel expects {kc} input channels, input has {c}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!("kernel must be square, got {kh}x{kw}")));
        }
        let out_h = spec.output_len(h, kh)?;
        let out_w = spec.output_len(w, kw)?;
        Ok(ConvShape {
            batch: b,
            in_channels: c,
            out_channels: o,
            height: h,
            width: w,
            kernel: kh,
            out_h,
            out_w,
            spec,
        })
    }

    fn geometry(&self) -> Geometry {
        Geometry {
            channels: self.in_channels,
            height: self.height,
            width: self.width,
            kernel: self.kernel,
            out_h: self.out_h,
            out_w: self.out_w,
            spec: self.spec,
        }
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }
}

pub(crate) fn four(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::shape(format!("{what} must be 4-D, got {shape:?}"))),
    }
}

/// Below this many output pixels per item, a convolution lowers the whole
/// batch to one GEMM instead of one per item: per-item products would
/// degenerate to matrix-vector work that rereads the kernel for every item.
const BATCHED_MAX_COLS: usize = 16;

/// im2col of every item side by side: `[rows, batch * cols]`.
fn im2col_batched<T: Scalar>(input: &[T], g: &Geometry, batch: usize) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_item = g.channels * g.height * g.width;
    let mut all = vec![T::zero(); rows * batch * cols];
    let mut col = vec![T::zero(); rows * cols];
    for b in 0..batch {
        im2col(&input[b * in_item..(b + 1) * in_item], g, &mut col);
        for r in 0..rows {
            all[(r * batch + b) * cols..(r * batch + b + 1) * cols]
                .copy_from_slice(&col[r * cols..(r + 1) * cols]);
        }
    }
    all
}

fn conv2d_forward_batched<T: Scalar>(input: &[T], kernel: &[T], bias: &[T], shape: &ConvShape) -> Vec<T> {
    let g = shape.geometry();
    let (rows, cols, b, o) = (g.col_rows(), g.col_cols(), shape.batch, shape.out_channels);
    let col = im2col_batched(input, &g, b);
    let n = b * cols;
    let mut y = vec![T::zero(); o * n];
    T::gemm(
        o,
        rows,
        n,
        T::one(),
        kernel,
        (rows as isize, 1),
        &col,
        (n as isize, 1),
        T::zero(),
        &mut y,
        n as isize,
    );
    let mut out = vec![T::zero(); b * o * cols];
    for i in 0..b {
        for oc in 0..o {
            let src = &y[oc * n + i * cols..oc * n + (i + 1) * cols];
            let dst = &mut out[(i * o + oc) * cols..(i * o + oc + 1) * cols];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + bias[oc];
            }
        }
    }
    out
}

fn conv2d_backward_batched<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    shape: &ConvShape,
    need_input: bool,
) -> ConvGrads<T> {
    let g = shape.geometry();
    let (rows, cols, b, o) = (g.col_rows(), g.col_cols(), shape.batch, shape.out_channels);
    let n = b * cols;
    let col = im2col_batched(input, &g, b);
    // dy as [o, batch * cols]
    let mut dy = vec![T::zero(); o * n];
    for i in 0..b {
        for oc in 0..o {
            dy[oc * n + i * cols..oc * n + (i + 1) * cols]
                .copy_from_slice(&grad_out[(i * o + oc) * cols..(i * o + oc + 1) * cols]);
        }
    }
    let mut dw = vec![T::zero(); o * rows];
    T::gemm(
        o,
        n,
        rows,
        T::one(),
        &dy,
        (n as isize, 1),
        &col,
        (1, n as isize),
        T::zero(),
        &mut dw,
        rows as isize,
    );
    let mut db = vec![T::zero(); o];
    for i in 0..b {
        for (oc, d) in db.iter_mut().enumerate() {
            *d += dy[oc * n + i * cols..oc * n + (i + 1) * cols]
                .iter()
                .copied()
                .sum();
        }
    }
    let input_grad = need_input.then(|| {
        let mut dcol = vec![T::zero(); rows * n];
        T::gemm(
            rows,
            o,
            n,
            T::one(),
            kernel,
            (1, rows as isize),
            &dy,
            (n as isize, 1),
            T::zero(),
            &mut dcol,
            n as isize,
        );
        let in_item = shape.in_channels * shape.height * shape.width;
        let mut dx = vec![T::zero(); b * in_item];
        let mut item = vec![T::zero(); rows * cols];
        for i in 0..b {
            for r in 0..rows {
                item[r * cols..(r + 1) * cols]
                    .copy_from_slice(&dcol[r * n + i * cols..r * n + (i + 1) * cols]);
            }
            col2im(&item, &g, &mut dx[i * in_item..(i + 1) * in_item]);
        }
        dx
    });
    ConvGrads {
        input: input_grad,
        kernel: dw,
        bias: db,
    }
}

pub fn conv2d_forward<T: Scalar>(input: &[T], kernel: &[T], bias: &[T], shape: &ConvShape) -> Vec<T> {
    let g = shape.geometry();
    let (rows, cols) = (g.col_rows(), g.col_cols());
    if cols <= BATCHED_MAX_COLS {
        return conv2d_forward_batched(input, kernel, bias, shape);
    }
    let in_item = shape.in_channels * shape.height * shape.width;
    let out_item = shape.out_channels * cols;
    let mut out = vec![T::zero(); shape.batch * out_item];
    parallel::for_each_chunk_mut(&mut out, out_item, |b, y| {
        let mut col = vec![T::zero(); rows * cols];
        im2col(&input[b * in_item..(b + 1) * in_item], &g, &mut col);
        for (o, plane) in y.chunks_mut(cols).enumerate() {
            plane.fill(bias[o]);
        }
        T::gemm(
            shape.out_channels,
            rows,
            cols,
            T::one(),
            kernel,
            (rows as isize, 1),
            &col,
            (cols as isize, 1),
            T::one(),
            y,
            cols as isize,
        );
    });
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    shape: &ConvShape,
    need_input: bool,
) -> ConvGrads<T> {
    let g = shape.geometry();
    let (rows, cols) = (g.col_rows(), g.col_cols());
    if cols <= BATCHED_MAX_COLS {
        return conv2d_backward_batched(input, kernel, grad_out, shape, need_input);
    }
    let in_item = shape.in_channels * shape.height * shape.width;
    let out_item = shape.out_channels * cols;
    let o = shape.out_channels;

    let per_item = parallel::map_indexed(shape.batch, |b| {
        let dy = &grad_out[b * out_item..(b + 1) * out_item];
        let mut col = vec![T::zero(); rows * cols];
        im2col(&input[b * in_item..(b + 1) * in_item], &g, &mut col);
        let mut dw = vec![T::zero(); o * rows];
        T::gemm(
            o,
            cols,
            rows,
            T::one(),
            dy,
            (cols as isize, 1),
            &col,
            (1, cols as isize),
            T::zero(),
            &mut dw,
            rows as isize,
        );
        let db: Vec<T> = dy.chunks(cols).map(|p| p.iter().copied().sum()).collect();
        let dx = need_input.then(|| {
            T::gemm(
                rows,
                o,
                cols,
                T::one(),
                kernel,
                (1, rows as isize),
                dy,
                (cols as isize, 1),
                T::zero(),
                &mut col,
                cols as isize,
            );
            let mut dx = vec![T::zero(); in_item];
            col2im(&col, &g, &mut dx);
            dx
        });
        (dw, db, dx)
    });

    reduce_items(per_item, o * rows, o, need_input.then_some(in_item))
}

/// Kernel, bias and optional input gradients of one batch item.
type ItemGrads<T> = (Vec<T>, Vec<T>, Option<Vec<T>>);

fn reduce_items<T: Scalar>(
    per_item: Vec<ItemGrads<T>>,
    kernel_len: usize,
    bias_len: usize,
    input_item: Option<usize>,
) -> ConvGrads<T> {
    let mut kernel = vec![T::zero(); kernel_len];
    let mut bias = vec![T::zero(); bias_len];
    let mut input = input_item.map(|n| Vec::with_capacity(n * per_item.len()));
    for (dw, db, dx) in per_item {
        kernel.iter_mut().zip(&dw).for_each(|(a, &b)| *a += b);
        bias.iter_mut().zip(&db).for_each(|(a, &b)| *a += b);
        if let (Some(all), Some(dx)) = (input.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
    }
    ConvGrads { input, kernel, bias }
}

/// Shapes of a transposed convolution that enlarges each spatial axis by
/// `factor`: input `[b, ci, h, w]`, kernel `[ci, co, k, k]`, output
/// `[b, co, factor*h, factor*w]`. It is the adjoint of a forward convolution
/// with the same kernel, stride `factor` and [`ConvSpec::same`] padding.
#[derive(Clone, Copy, Debug)]
pub struct DeconvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub factor: usize,
}

impl DeconvShape {
    pub fn new(input: &[usize], kernel: &[usize], factor: usize) -> Result<Self> {
        let (b, c, h, w) = four(input, "transposed conv input")?;
        let (kc, co, kh, kw) = four(kernel, "transposed conv kernel")?;
        if factor == 0 {
            return Err(Error::shape("up factor must be positive"));
        }
        if kc != c {
            return Err(Error::shape(format!(
                "kernel expects {kc} input channels, input has {c}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!("kernel must be square, got {kh}x{kw}")));
        }
        if kh < factor {
            return Err(Error::shape(format!(
                "kernel {kh} smaller than up factor {factor}"
            )));
        }
        Ok(DeconvShape {
            batch: b,
            in_channels: c,
            out_channels: co,
            height: h,
            width: w,
            kernel: kh,
            factor,
        })
    }

    pub fn spec(&self) -> ConvSpec {
        ConvSpec::same(self.kernel, self.factor)
    }

    /// Geometry of the adjoint forward convolution, which maps the enlarged
    /// output back onto the input grid.
    fn geometry(&self) -> Geometry {
        Geometry {
            channels: self.out_channels,
            height: self.height * self.factor,
            width: self.width * self.factor,
            kernel: self.kernel,
            out_h: self.height,
            out_w: self.width,
            spec: self.spec(),
        }
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [
            self.batch,
            self.out_channels,
            self.height * self.factor,
            self.width * self.factor,
        ]
    }
}

pub fn conv_transpose2d_forward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    shape: &DeconvShape,
) -> Vec<T> {
    let g = shape.geometry();
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let ci = shape.in_channels;
    let in_item = ci * cols;
    let out_plane = g.height * g.width;
    let out_item = shape.out_channels * out_plane;
    let mut out = vec![T::zero(); shape.batch * out_item];
    parallel::for_each_chunk_mut(&mut out, out_item, |b, y| {
        let mut col = vec![T::zero(); rows * cols];
        T::gemm(
            rows,
            ci,
            cols,
            T::one(),
            kernel,
            (1, rows as isize),
            &input[b * in_item..(b + 1) * in_item],
            (cols as isize, 1),
            T::zero(),
            &mut col,
            cols as isize,
        );
        col2im(&col, &g, y);
        for (o, plane) in y.chunks_mut(out_plane).enumerate() {
            plane.iter_mut().for_each(|v| *v += bias[o]);
        }
    });
    out
}

pub fn conv_transpose2d_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    shape: &DeconvShape,
    need_input: bool,
) -> ConvGrads<T> {
    let g = shape.geometry();
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let ci = shape.in_channels;
    let in_item = ci * cols;
    let out_plane = g.height * g.width;
    let out_item = shape.out_channels * out_plane;

    let per_item = parallel::map_indexed(shape.batch, |b| {
        let dy = &grad_out[b * out_item..(b + 1) * out_item];
        let mut col = vec![T::zero(); rows * cols];
        im2col(dy, &g, &mut col);
        let mut dw = vec![T::zero(); ci * rows];
        T::gemm(
            ci,
            cols,
            rows,
            T::one(),
            &input[b * in_item..(b + 1) * in_item],
            (cols as isize, 1),
            &col,
            (1, cols as isize),
            T::zero(),
            &mut dw,
            rows as isize,
        );
        let db: Vec<T> = dy.chunks(out_plane).map(|p| p.iter().copied().sum()).collect();
        let dx = need_input.then(|| {
            let mut dx = vec![T::zero(); in_item];
            T::gemm(
                ci,
                rows,
                cols,
                T::one(),
                kernel,
                (rows as isize, 1),
                &col,
                (cols as isize, 1),
                T::zero(),
                &mut dx,
                cols as isize,
            );
            dx
        });
        (dw, db, dx)
    });

    reduce_items(
        per_item,
        ci * rows,
        shape.out_channels,
        need_input.then_some(in_item),
    )
}

/// 2x2 max pooling with stride 2. Returns the pooled values and, for each
/// output cell, the flat input index that won (first in row-major scan order
/// on ties).
pub fn maxpool2x2_forward<T: Scalar>(
    input: &[T],
    dims: (usize, usize, usize, usize),
) -> Result<(Vec<T>, Vec<usize>)> {
    let (b, c, h, w) = dims;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "max pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let first = base + 2 * oy * w + 2 * ox;
                let mut best = first;
                for idx in [first + 1, first + w, first + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    Ok((out, arg))
}

pub fn upsample_nearest2x_forward<T: Scalar>(input: &[T], dims: (usize, usize, usize, usize)) -> Vec<T> {
    let (b, c, h, w) = dims;
    let ow = 2 * w;
    let mut out = vec![T::zero(); b * c * 4 * h * w];
    for plane in 0..b * c {
        let src = &input[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2x_backward<T: Scalar>(grad_out: &[T], dims: (usize, usize, usize, usize)) -> Vec<T> {
    let (b, c, h, w) = dims;
    let ow = 2 * w;
    let mut out = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let src = &grad_out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * ow + 2 * x;
                dst[y * w + x] = src[i] + src[i + 1] + src[i + ow] + src[i + ow + 1];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_halves_even_inputs() {
        let spec = ConvSpec::same(7, 2);
        assert_eq!((spec.pad_begin, spec.pad_end), (2, 3));
        assert_eq!(spec.output_len(64, 7).unwrap(), 32);
        assert_eq!(spec.output_len(8, 7).unwrap(), 4);
        assert_eq!(ConvSpec::same(5, 1).output_len(16, 5).unwrap(), 16);
    }

    #[test]
    fn symmetric_stride_two_on_even_input_is_rejected() {
        let err = ConvSpec::symmetric(2, 3).output_len(64, 7).unwrap_err();
        assert!(err.to_string().contains("non-integral"), "{err}");
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = Geometry {
            channels: 2,
            height: 5,
            width: 6,
            kernel: 3,
            out_h: 3,
            out_w: 3,
            spec: ConvSpec {
                stride: 2,
                pad_begin: 1,
                pad_end: 1,
            },
        };
        assert_eq!(g.spec.output_len(5, 3).unwrap(), 3);
        let x: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| ((i * 13) % 7) as f64 - 3.0)
            .collect();
        let mut col = vec![0.0; c.len()];
        im2col(&x, &g, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn maxpool_ties_pick_first_in_scan_order() {
        let (_, arg) = maxpool2x2_forward(&[1.0f32, 1.0, 1.0, 1.0], (1, 1, 2, 2)).unwrap();
        assert_eq!(arg, vec![0]);
        let (v, arg) = maxpool2x2_forward(&[1.0f32, 4.0, 4.0, 3.0], (1, 1, 2, 2)).unwrap();
        assert_eq!((v, arg), (vec![4.0], vec![1]));
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        assert!(maxpool2x2_forward(&[0.0f32; 6], (1, 1, 2, 3)).is_err());
    }
}
