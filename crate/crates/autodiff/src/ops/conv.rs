//! Strided, dilated 1D/2D cross-correlation and its adjoint (transposed
//! convolution).
//!
//! All kernels work on 4D `[batch, channels, height, width]` buffers; 1D
//! tensors `[batch, channels, time]` are treated as height 1. Every output
//! element is produced by a fixed loop order, so results are bitwise
//! reproducible.

use crate::error::{AutodiffError, Result};
use crate::graph::{BackwardCtx, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Output extent `ceil(input / stride)`; odd total padding puts the extra
    /// element on the bottom/right. For odd kernels at stride 1 this is the
    /// symmetric non-causal padding.
    Same,
    /// Explicit `(top, bottom, left, right)`.
    Explicit(usize, usize, usize, usize),
}

/// Stride/dilation/padding of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(stride: (usize, usize), padding: Padding) -> Self {
        Self {
            stride,
            dilation: (1, 1),
            padding,
        }
    }

    pub fn dilated(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }

    /// 1D helper: stride and dilation along the time axis only.
    pub fn time(stride: usize, dilation: usize, padding: Padding) -> Self {
        let padding = match padding {
            Padding::Explicit(_, _, l, r) => Padding::Explicit(0, 0, l, r),
            p => p,
        };
        Self {
            stride: (1, stride),
            dilation: (1, dilation),
            padding,
        }
    }
}

/// Concrete geometry once input and kernel extents are known.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub in_hw: (usize, usize),
    pub k_hw: (usize, usize),
    pub out_hw: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub pad_tl: (usize, usize),
}

fn same_pad(dim: usize, k: usize, s: usize, d: usize) -> (usize, usize) {
    let out = dim.div_ceil(s);
    let span = d * (k - 1) + 1;
    let total = ((out.saturating_sub(1)) * s + span).saturating_sub(dim);
    (total / 2, total - total / 2)
}

impl Geometry {
    pub fn resolve(spec: &ConvSpec, in_hw: (usize, usize), k_hw: (usize, usize)) -> Result<Self> {
        let (sh, sw) = spec.stride;
        let (dh, dw) = spec.dilation;
        if sh == 0 || sw == 0 || dh == 0 || dw == 0 || k_hw.0 == 0 || k_hw.1 == 0 {
            return Err(AutodiffError::InvalidArgument(format!(
                "kernel {k_hw:?}, stride {:?} and dilation {:?} must be positive",
                spec.stride, spec.dilation
            )));
        }
        let (pt, pb, pl, pr) = match spec.padding {
            Padding::Valid => (0, 0, 0, 0),
            Padding::Same => {
                let (t, b) = same_pad(in_hw.0, k_hw.0, sh, dh);
                let (l, r) = same_pad(in_hw.1, k_hw.1, sw, dw);
                (t, b, l, r)
            }
            Padding::Explicit(t, b, l, r) => (t, b, l, r),
        };
        let span_h = dh * (k_hw.0 - 1) + 1;
        let span_w = dw * (k_hw.1 - 1) + 1;
        let ph = in_hw.0 + pt + pb;
        let pw = in_hw.1 + pl + pr;
        if span_h > ph || span_w > pw {
            return Err(AutodiffError::InvalidArgument(format!(
                "kernel extent ({span_h}, {span_w}) exceeds padded input ({ph}, {pw})"
            )));
        }
        Ok(Self {
            in_hw,
            k_hw,
            out_hw: ((ph - span_h) / sh + 1, (pw - span_w) / sw + 1),
            stride: spec.stride,
            dilation: spec.dilation,
            pad_tl: (pt, pl),
        })
    }
}

/// Output positions `o` in `[lo, hi)` for which `o*s + k*d - pad` lands inside `[0, len)`.
#[inline]
fn valid_range(k: usize, d: usize, pad: usize, s: usize, len: usize, out: usize) -> (usize, usize) {
    let off = (k * d) as i64 - pad as i64;
    let s = s as i64;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = (len as i64 - 1 - off).div_euclid(s) + 1;
    let lo = lo.clamp(0, out as i64) as usize;
    let hi = hi.clamp(0, out as i64) as usize;
    (lo, hi.max(lo))
}

/// Dimensions of one convolution call: `x: [b, c, h, w]`, `k: [o, c, kh, kw]`.
#[derive(Clone, Copy, Debug)]
struct Dims {
    batch: usize,
    cin: usize,
    cout: usize,
    geo: Geometry,
}

impl Dims {
    fn in_plane(&self) -> usize {
        self.geo.in_hw.0 * self.geo.in_hw.1
    }

    fn out_plane(&self) -> usize {
        self.geo.out_hw.0 * self.geo.out_hw.1
    }

    /// Rows of the unfolded input matrix: `cin * kh * kw`.
    fn patch(&self) -> usize {
        self.cin * self.geo.k_hw.0 * self.geo.k_hw.1
    }
}

/// Unfolds one `[cin, h, w]` item into a `[cin*kh*kw, oh*ow]` patch matrix
/// (zeros where the kernel reads padding).
fn im2col(x: &[f64], d: &Dims, col: &mut [f64]) {
    let Geometry {
        in_hw: (h, w),
        k_hw: (kh, kw),
        out_hw: (oh, ow),
        stride: (sh, sw),
        dilation: (dh, dw),
        pad_tl: (pt, pl),
    } = d.geo;
    let p = oh * ow;
    col.fill(0.0);
    for c in 0..d.cin {
        let xp = &x[c * h * w..][..h * w];
        for ky in 0..kh {
            let (oy0, oy1) = valid_range(ky, dh, pt, sh, h, oh);
            for kx in 0..kw {
                let (ox0, ox1) = valid_range(kx, dw, pl, sw, w, ow);
                let row = &mut col[((c * kh + ky) * kw + kx) * p..][..p];
                if ox0 >= ox1 {
                    continue;
                }
                let ix0 = ox0 * sw + kx * dw - pl;
                for oy in oy0..oy1 {
                    let xr = &xp[(oy * sh + ky * dh - pt) * w..][..w];
                    let dst = &mut row[oy * ow + ox0..oy * ow + ox1];
                    if sw == 1 {
                        dst.copy_from_slice(&xr[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for (j, v) in dst.iter_mut().enumerate() {
                            *v = xr[ix0 + j * sw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back into `[cin, h, w]`.
fn col2im(col: &[f64], d: &Dims, x: &mut [f64]) {
    let Geometry {
        in_hw: (h, w),
        k_hw: (kh, kw),
        out_hw: (oh, ow),
        stride: (sh, sw),
        dilation: (dh, dw),
        pad_tl: (pt, pl),
    } = d.geo;
    let p = oh * ow;
    for c in 0..d.cin {
        let xp = &mut x[c * h * w..][..h * w];
        for ky in 0..kh {
            let (oy0, oy1) = valid_range(ky, dh, pt, sh, h, oh);
            for kx in 0..kw {
                let (ox0, ox1) = valid_range(kx, dw, pl, sw, w, ow);
                if ox0 >= ox1 {
                    continue;
                }
                let row = &col[((c * kh + ky) * kw + kx) * p..][..p];
                let ix0 = ox0 * sw + kx * dw - pl;
                for oy in oy0..oy1 {
                    let xr = &mut xp[(oy * sh + ky * dh - pt) * w..][..w];
                    let src = &row[oy * ow + ox0..oy * ow + ox1];
                    if sw == 1 {
                        for (xv, v) in xr[ix0..ix0 + (ox1 - ox0)].iter_mut().zip(src) {
                            *xv += v;
                        }
                    } else {
                        for (j, v) in src.iter().enumerate() {
                            xr[ix0 + j * sw] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = alpha * a(m x k) * b(k x n) + beta * c`, with `a`/`b`
/// optionally read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices hold at least m*k, k*n and m*n elements and the
    // strides above address exactly those row-major (or transposed) layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(x: &[f64], k: &[f64], d: Dims) -> Vec<f64> {
    let (ip, op, pk) = (d.in_plane(), d.out_plane(), d.patch());
    let mut y = vec![0.0; d.batch * d.cout * op];
    let mut col = vec![0.0; pk * op];
    for b in 0..d.batch {
        im2col(&x[b * d.cin * ip..][..d.cin * ip], &d, &mut col);
        gemm(
            d.cout,
            pk,
            op,
            k,
            false,
            &col,
            false,
            0.0,
            &mut y[b * d.cout * op..][..d.cout * op],
        );
    }
    y
}

fn conv_backward_input(gy: &[f64], k: &[f64], d: Dims) -> Vec<f64> {
    let (ip, op, pk) = (d.in_plane(), d.out_plane(), d.patch());
    let mut gx = vec![0.0; d.batch * d.cin * ip];
    let mut col = vec![0.0; pk * op];
    for b in 0..d.batch {
        gemm(
            pk,
            d.cout,
            op,
            k,
            true,
            &gy[b * d.cout * op..][..d.cout * op],
            false,
            0.0,
            &mut col,
        );
        col2im(&col, &d, &mut gx[b * d.cin * ip..][..d.cin * ip]);
    }
    gx
}

fn conv_backward_kernel(x: &[f64], gy: &[f64], d: Dims) -> Vec<f64> {
    let (ip, op, pk) = (d.in_plane(), d.out_plane(), d.patch());
    let mut gk = vec![0.0; d.cout * pk];
    let mut col = vec![0.0; pk * op];
    for b in 0..d.batch {
        im2col(&x[b * d.cin * ip..][..d.cin * ip], &d, &mut col);
        let beta = if b == 0 { 0.0 } else { 1.0 };
        gemm(
            d.cout,
            op,
            pk,
            &gy[b * d.cout * op..][..d.cout * op],
            false,
            &col,
            true,
            beta,
            &mut gk,
        );
    }
    gk
}

/// Splits a 3D `[b, c, t]` or 4D `[b, c, h, w]` shape into `(b, c, (h, w))`.
fn split_shape(shape: &[usize], what: &str) -> Result<(usize, usize, (usize, usize))> {
    match *shape {
        [b, c, t] => Ok((b, c, (1, t))),
        [b, c, h, w] => Ok((b, c, (h, w))),
        _ => Err(AutodiffError::InvalidArgument(format!(
            "{what} must have rank 3 or 4, got {shape:?}"
        ))),
    }
}

fn with_spatial(prefix: [usize; 2], hw: (usize, usize), rank: usize) -> Vec<usize> {
    if rank == 3 {
        vec![prefix[0], prefix[1], hw.1]
    } else {
        vec![prefix[0], prefix[1], hw.0, hw.1]
    }
}

impl Graph {
    /// Cross-correlation of `x: [B, Cin, (H,) W]` with `kernel: [Cout, Cin, (KH,) KW]`.
    pub fn conv(&mut self, x: Var, kernel: Var, spec: ConvSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        let (batch, cin, in_hw) = split_shape(&xs, "conv input")?;
        let (cout, kcin, k_hw) = split_shape(&ks, "conv kernel")?;
        if xs.len() != ks.len() || kcin != cin {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv",
                lhs: xs,
                rhs: ks,
            });
        }
        let geo = Geometry::resolve(&spec, in_hw, k_hw)?;
        let dims = Dims {
            batch,
            cin,
            cout,
            geo,
        };
        let y = conv_forward(self.value(x).data(), self.value(kernel).data(), dims);
        let out = Tensor::new(with_spatial([batch, cout], geo.out_hw, xs.len()), y)?;
        Ok(self.record(out, &[x, kernel], move |c: &BackwardCtx| {
            let gx = conv_backward_input(c.grad.data(), c.inputs[1].data(), dims);
            let gk = conv_backward_kernel(c.inputs[0].data(), c.grad.data(), dims);
            vec![
                Some(Tensor::new(c.inputs[0].shape().to_vec(), gx).expect("shape")),
                Some(Tensor::new(c.inputs[1].shape().to_vec(), gk).expect("shape")),
            ]
        }))
    }

    /// Transposed convolution: the exact adjoint of [`Graph::conv`] with the
    /// same `kernel` and `spec`, mapping `[B, Cout, out_hw]` back to
    /// `[B, Cin, target_hw]`. `target_hw` is the input extent of the forward
    /// convolution (for 1D tensors only the width is used).
    pub fn conv_transpose(
        &mut self,
        y: Var,
        kernel: Var,
        spec: ConvSpec,
        target_hw: (usize, usize),
    ) -> Result<Var> {
        let ys = self.shape(y).to_vec();
        let ks = self.shape(kernel).to_vec();
        let (batch, cout, y_hw) = split_shape(&ys, "transposed conv input")?;
        let (kcout, cin, k_hw) = split_shape(&ks, "transposed conv kernel")?;
        if ys.len() != ks.len() || kcout != cout {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv_transpose",
                lhs: ys,
                rhs: ks,
            });
        }
        let target_hw = if ys.len() == 3 {
            (1, target_hw.1)
        } else {
            target_hw
        };
        let geo = Geometry::resolve(&spec, target_hw, k_hw)?;
        if geo.out_hw != y_hw {
            return Err(AutodiffError::InvalidArgument(format!(
                "transposed conv: a forward conv on {target_hw:?} yields {:?}, input has {y_hw:?}",
                geo.out_hw
            )));
        }
        let dims = Dims {
            batch,
            cin,
            cout,
            geo,
        };
        let x = conv_backward_input(self.value(y).data(), self.value(kernel).data(), dims);
        let out = Tensor::new(with_spatial([batch, cin], target_hw, ys.len()), x)?;
        Ok(self.record(out, &[y, kernel], move |c: &BackwardCtx| {
            let gy = conv_forward(c.grad.data(), c.inputs[1].data(), dims);
            let gk = conv_backward_kernel(c.grad.data(), c.inputs[0].data(), dims);
            vec![
                Some(Tensor::new(c.inputs[0].shape().to_vec(), gy).expect("shape")),
                Some(Tensor::new(c.inputs[1].shape().to_vec(), gk).expect("shape")),
            ]
        }))
    }

    /// Dilated stride-1 1D convolution with symmetric (non-causal) zero
    /// padding; the output keeps the input length. `kernel` length must be odd.
    pub fn conv1d_dilated(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let k = *self.shape(kernel).last().unwrap_or(&0);
        if k.is_multiple_of(2) {
            return Err(AutodiffError::InvalidArgument(format!(
                "non-causal dilated conv needs an odd kernel, got {k}"
            )));
        }
        let pad = (k - 1) / 2 * dilation;
        self.conv(
            x,
            kernel,
            ConvSpec::time(1, dilation, Padding::Explicit(0, 0, pad, pad)),
        )
    }

    /// Adds a per-channel bias `b: [C]` to `x: [B, C, ...]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() < 2 || bs != [xs[1]] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: xs,
                rhs: bs,
            });
        }
        let (batch, ch) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let mut out = self.value(x).clone();
        let bv = self.value(bias).data().to_vec();
        for (i, chunk) in out
            .data_mut()
            .chunks_mut(inner.max(1))
            .enumerate()
            .take(batch * ch)
        {
            let b = bv[i % ch];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok(self.record(out, &[x, bias], move |c: &BackwardCtx| {
            let mut gb = vec![0.0; ch];
            for (i, chunk) in c
                .grad
                .data()
                .chunks(inner.max(1))
                .enumerate()
                .take(batch * ch)
            {
                gb[i % ch] += chunk.iter().sum::<f64>();
            }
            vec![Some(c.grad.clone()), Some(Tensor::from_vec(gb))]
        }))
    }
}

/// Number of time steps produced by a stride-`stride` "same" conv.
pub fn same_output_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

#[cfg(test)]
mod direct {
    //! Straightforward loop implementations used as an independent oracle.
    use super::*;

    pub(super) fn direct_forward(x: &[f64], k: &[f64], d: Dims) -> Vec<f64> {
        let Geometry {
            in_hw: (h, w),
            k_hw: (kh, kw),
            out_hw: (oh, ow),
            stride: (sh, sw),
            dilation: (dh, dw),
            pad_tl: (pt, pl),
        } = d.geo;
        let mut y = vec![0.0; d.batch * d.cout * oh * ow];
        for b in 0..d.batch {
            for o in 0..d.cout {
                let yp = &mut y[(b * d.cout + o) * oh * ow..][..oh * ow];
                for c in 0..d.cin {
                    let xp = &x[(b * d.cin + c) * h * w..][..h * w];
                    for ky in 0..kh {
                        let (oy0, oy1) = valid_range(ky, dh, pt, sh, h, oh);
                        for kx in 0..kw {
                            let wv = k[((o * d.cin + c) * kh + ky) * kw + kx];
                            let (ox0, ox1) = valid_range(kx, dw, pl, sw, w, ow);
                            if ox0 >= ox1 {
                                continue;
                            }
                            for oy in oy0..oy1 {
                                let iy = oy * sh + ky * dh - pt;
                                let xr = &xp[iy * w..][..w];
                                let yr = &mut yp[oy * ow..][ox0..ox1];
                                let ix0 = ox0 * sw + kx * dw - pl;
                                if sw == 1 {
                                    for (yv, xv) in yr.iter_mut().zip(&xr[ix0..ix0 + (ox1 - ox0)]) {
                                        *yv += wv * xv;
                                    }
                                } else {
                                    for (j, yv) in yr.iter_mut().enumerate() {
                                        *yv += wv * xr[ix0 + j * sw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub(super) fn direct_backward_input(gy: &[f64], k: &[f64], d: Dims) -> Vec<f64> {
        let Geometry {
            in_hw: (h, w),
            k_hw: (kh, kw),
            out_hw: (oh, ow),
            stride: (sh, sw),
            dilation: (dh, dw),
            pad_tl: (pt, pl),
        } = d.geo;
        let mut gx = vec![0.0; d.batch * d.cin * h * w];
        for b in 0..d.batch {
            for c in 0..d.cin {
                let gxp = &mut gx[(b * d.cin + c) * h * w..][..h * w];
                for o in 0..d.cout {
                    let gyp = &gy[(b * d.cout + o) * oh * ow..][..oh * ow];
                    for ky in 0..kh {
                        let (oy0, oy1) = valid_range(ky, dh, pt, sh, h, oh);
                        for kx in 0..kw {
                            let wv = k[((o * d.cin + c) * kh + ky) * kw + kx];
                            let (ox0, ox1) = valid_range(kx, dw, pl, sw, w, ow);
                            if ox0 >= ox1 {
                                continue;
                            }
                            for oy in oy0..oy1 {
                                let iy = oy * sh + ky * dh - pt;
                                let gr = &gyp[oy * ow..][ox0..ox1];
                                let xr = &mut gxp[iy * w..][..w];
                                let ix0 = ox0 * sw + kx * dw - pl;
                                if sw == 1 {
                                    for (xv, gv) in xr[ix0..ix0 + (ox1 - ox0)].iter_mut().zip(gr) {
                                        *xv += wv * gv;
                                    }
                                } else {
                                    for (j, gv) in gr.iter().enumerate() {
                                        xr[ix0 + j * sw] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub(super) fn direct_backward_kernel(x: &[f64], gy: &[f64], d: Dims) -> Vec<f64> {
        let Geometry {
            in_hw: (h, w),
            k_hw: (kh, kw),
            out_hw: (oh, ow),
            stride: (sh, sw),
            dilation: (dh, dw),
            pad_tl: (pt, pl),
        } = d.geo;
        let mut gk = vec![0.0; d.cout * d.cin * kh * kw];
        for o in 0..d.cout {
            for c in 0..d.cin {
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(ky, dh, pt, sh, h, oh);
                    for kx in 0..kw {
                        let (ox0, ox1) = valid_range(kx, dw, pl, sw, w, ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let ix0 = ox0 * sw + kx * dw - pl;
                        let mut acc = 0.0;
                        for b in 0..d.batch {
                            let xp = &x[(b * d.cin + c) * h * w..][..h * w];
                            let gyp = &gy[(b * d.cout + o) * oh * ow..][..oh * ow];
                            for oy in oy0..oy1 {
                                let iy = oy * sh + ky * dh - pt;
                                let xr = &xp[iy * w..][..w];
                                let gr = &gyp[oy * ow..][ox0..ox1];
                                if sw == 1 {
                                    acc += gr
                                        .iter()
                                        .zip(&xr[ix0..ix0 + (ox1 - ox0)])
                                        .map(|(g, x)| g * x)
                                        .sum::<f64>();
                                } else {
                                    acc += gr
                                        .iter()
                                        .enumerate()
                                        .map(|(j, g)| g * xr[ix0 + j * sw])
                                        .sum::<f64>();
                                }
                            }
                        }
                        gk[((o * d.cin + c) * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
        gk
    }
}
