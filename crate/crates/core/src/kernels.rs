//! Raw forward/backward kernels on flat buffers. The tape in
//! [`crate::autograd`] owns shapes and bookkeeping; these functions only do
//! arithmetic.

use crate::scalar::Scalar;

/// Upper bound on the number of elements in one im2col chunk.
const IM2COL_CHUNK: usize = 1 << 20;

/// Shape bookkeeping for a single-image 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Returns `None` when the padded input is smaller than the kernel.
    pub fn new(
        (in_c, in_h, in_w): (usize, usize, usize),
        (out_c, kh, kw): (usize, usize, usize),
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        assert!(stride >= 1, "stride must be positive");
        if in_h + 2 * pad < kh || in_w + 2 * pad < kw {
            return None;
        }
        Some(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn rows_per_chunk(&self) -> usize {
        (IM2COL_CHUNK / (self.patch_len() * self.out_w).max(1)).clamp(1, self.out_h)
    }

    /// Fills `cols` (`patch_len × rows·out_w`) for output rows `[row0, row0+rows)`.
    fn im2col<T: Scalar>(&self, x: &[T], row0: usize, rows: usize, cols: &mut [T]) {
        let width = rows * self.out_w;
        let mut r = 0;
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let dst = &mut cols[r * width..(r + 1) * width];
                    for (dy, oy) in (row0..row0 + rows).enumerate() {
                        let out_row = &mut dst[dy * self.out_w..(dy + 1) * self.out_w];
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, slot) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *slot = if ix < 0 || ix >= self.in_w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    /// Scatter-adds `cols` back into `dx` (inverse of [`Self::im2col`]).
    fn col2im<T: Scalar>(&self, cols: &[T], row0: usize, rows: usize, dx: &mut [T]) {
        let width = rows * self.out_w;
        let mut r = 0;
        for c in 0..self.in_c {
            let plane = &mut dx[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let src = &cols[r * width..(r + 1) * width];
                    for (dy, oy) in (row0..row0 + rows).enumerate() {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.in_w {
                                dst[ix as usize] += src[dy * self.out_w + ox];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) of a `[C,H,W]` input with
/// `[O,C,kh,kw]` weights. Returns the `[O,out_h,out_w]` output.
pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let k = g.patch_len();
    let p = g.out_pixels();
    let mut out = vec![T::zero(); g.out_c * p];
    if let Some(b) = bias {
        for (o, &bo) in b.iter().enumerate() {
            out[o * p..(o + 1) * p].fill(bo);
        }
    }
    let step = g.rows_per_chunk();
    let mut cols = vec![T::zero(); k * step * g.out_w];
    let mut row0 = 0;
    while row0 < g.out_h {
        let rows = step.min(g.out_h - row0);
        let width = rows * g.out_w;
        g.im2col(x, row0, rows, &mut cols[..k * width]);
        T::gemm(
            g.out_c,
            k,
            width,
            T::one(),
            weight,
            (k, 1),
            &cols[..k * width],
            (width, 1),
            T::one(),
            &mut out[row0 * g.out_w..],
            (p, 1),
        );
        row0 += rows;
    }
    out
}

/// Accumulates input, weight and bias gradients for [`conv2d_forward`].
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let k = g.patch_len();
    let p = g.out_pixels();
    if let Some(db) = db {
        for (o, slot) in db.iter_mut().enumerate() {
            *slot += grad_out[o * p..(o + 1) * p].iter().copied().sum::<T>();
        }
    }
    if dx.is_none() && dw.is_none() {
        return;
    }
    let step = g.rows_per_chunk();
    let mut cols = vec![T::zero(); k * step * g.out_w];
    let mut row0 = 0;
    while row0 < g.out_h {
        let rows = step.min(g.out_h - row0);
        let width = rows * g.out_w;
        let chunk_grad = &grad_out[row0 * g.out_w..];
        if let Some(dw) = dw.as_deref_mut() {
            g.im2col(x, row0, rows, &mut cols[..k * width]);
            // dW += G · colsᵀ
            T::gemm(
                g.out_c,
                width,
                k,
                T::one(),
                chunk_grad,
                (p, 1),
                &cols[..k * width],
                (1, width),
                T::one(),
                dw,
                (k, 1),
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcols = Wᵀ · G
            T::gemm(
                k,
                g.out_c,
                width,
                T::one(),
                weight,
                (1, k),
                chunk_grad,
                (p, 1),
                T::zero(),
                &mut cols[..k * width],
                (width, 1),
            );
            g.col2im(&cols[..k * width], row0, rows, dx);
        }
        row0 += rows;
    }
}

/// Index of the first maximum among `indices` (row-major scan order).
#[inline]
fn first_argmax<T: Scalar>(x: &[T], indices: impl Iterator<Item = usize>) -> usize {
    let mut best = usize::MAX;
    for i in indices {
        if best == usize::MAX || x[i] > x[best] {
            best = i;
        }
    }
    best
}

/// Max pooling over `[C,H,W]`. Returns output values and, per output cell,
/// the flat input index that produced it.
pub fn maxpool2d_forward<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    kernel: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>, (usize, usize)) {
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * stride, ox * stride);
                let best = first_argmax(
                    x,
                    (y0..y0 + kernel).flat_map(|y| (x0..x0 + kernel).map(move |xx| base + y * w + xx)),
                );
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg, (oh, ow))
}

/// Bin `[start, end)` of `bins` equal divisions of `len` using floor/ceil
/// boundaries. Neighbouring bins may overlap by one cell.
pub fn pyramid_bin(index: usize, bins: usize, len: usize) -> (usize, usize) {
    let start = index * len / bins;
    let end = ((index + 1) * len).div_ceil(bins);
    (start, end)
}

/// Spatial pyramid max pooling. Output is ordered scale-major, then channel,
/// then row-major bins.
pub fn spp_forward<T: Scalar>(x: &[T], (c, h, w): (usize, usize, usize), scales: &[usize]) -> (Vec<T>, Vec<usize>) {
    let len: usize = c * scales.iter().map(|s| s * s).sum::<usize>();
    let mut out = Vec::with_capacity(len);
    let mut arg = Vec::with_capacity(len);
    for &s in scales {
        for ch in 0..c {
            let base = ch * h * w;
            for i in 0..s {
                let (r0, r1) = pyramid_bin(i, s, h);
                for j in 0..s {
                    let (c0, c1) = pyramid_bin(j, s, w);
                    let best = first_argmax(x, (r0..r1).flat_map(|y| (c0..c1).map(move |xx| base + y * w + xx)));
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    (out, arg)
}

/// Routes each output gradient to the input index that won the max.
pub fn scatter_argmax<T: Scalar>(grad_out: &[T], argmax: &[usize], dx: &mut [T]) {
    for (&g, &i) in grad_out.iter().zip(argmax) {
        dx[i] += g;
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln Σ exp(z)` with the max subtracted first.
pub fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln()
}

/// `ln Σ exp(z) - z[label]`, written as `(max - z[label]) + ln(1 + rest)`
/// so confident predictions keep full relative precision.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> T {
    let (top, max) =
        logits.iter().copied().enumerate().fold(
            (0, T::neg_infinity()),
            |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) },
        );
    let rest: T = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &z)| (z - max).exp())
        .sum();
    (max - logits[label]) + rest.ln_1p()
}
