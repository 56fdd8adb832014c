//! Forward kernels and their vector-Jacobian products.
//!
//! Every function here is pure. The tape in [`crate::tape`] calls the
//! `*_backward` companions; tests and oracles call the forward kernels
//! directly.

use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::tensor::{Matrix3, PadMode, Shape, Tensor};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Output extent of a same-padded convolution.
pub fn same_out(extent: usize, stride: usize) -> usize {
    extent.div_ceil(stride)
}

fn check_conv(x: Shape, k: Shape, bias: &[f64], stride: usize) -> Result<()> {
    if x.c != k.c {
        return Err(TensorError::shape(
            "conv2d",
            format!("input channels {} != kernel input channels {}", x.c, k.c),
        ));
    }
    if k.h.is_multiple_of(2) || k.w.is_multiple_of(2) {
        return Err(TensorError::shape(
            "conv2d",
            format!("kernel extent {}x{} must be odd", k.h, k.w),
        ));
    }
    if bias.len() != k.n {
        return Err(TensorError::shape(
            "conv2d",
            format!("bias length {} != output channels {}", bias.len(), k.n),
        ));
    }
    if stride == 0 {
        return Err(TensorError::argument("conv2d", "stride must be >= 1"));
    }
    Ok(())
}

/// Maps an input coordinate that may fall outside `[0, extent)` to a valid
/// index, or `None` when the padded value is zero.
#[inline]
fn pad_index(i: isize, extent: usize, pad: PadMode) -> Option<usize> {
    if i >= 0 && (i as usize) < extent {
        Some(i as usize)
    } else {
        match pad {
            PadMode::Zero => None,
            PadMode::Replicate => Some(i.clamp(0, extent as isize - 1) as usize),
        }
    }
}

/// Source offset (within one sample) of every `(ci, ky, kx)` tap for every
/// output pixel, pixel-major; `None` marks a zero-padded tap.
struct Patches {
    taps: usize,
    offsets: Vec<Option<usize>>,
}

impl Patches {
    fn new(xs: Shape, ks: Shape, stride: usize, pad: PadMode, oh: usize, ow: usize) -> Self {
        let taps = ks.c * ks.h * ks.w;
        let (ph, pw) = ((ks.h / 2) as isize, (ks.w / 2) as isize);
        let mut offsets = Vec::with_capacity(oh * ow * taps);
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..ks.c {
                    for ky in 0..ks.h {
                        let iy = pad_index((oy * stride) as isize + ky as isize - ph, xs.h, pad);
                        for kx in 0..ks.w {
                            let ix = pad_index((ox * stride) as isize + kx as isize - pw, xs.w, pad);
                            offsets.push(match (iy, ix) {
                                (Some(iy), Some(ix)) => Some((ci * xs.h + iy) * xs.w + ix),
                                _ => None,
                            });
                        }
                    }
                }
            }
        }
        Patches { taps, offsets }
    }

    /// Patch matrix of one sample, `(pixels, taps)` row-major.
    fn gather(&self, sample: &[f64]) -> Vec<f64> {
        self.offsets
            .iter()
            .map(|o| o.map_or(0.0, |i| sample[i]))
            .collect()
    }
}

/// Same-size 2-D cross-correlation. `kernel` is `(co, ci, kh, kw)`.
pub fn conv2d(
    x: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    stride: usize,
    pad: PadMode,
) -> Result<Tensor> {
    let xs = x.shape();
    let ks = kernel.shape();
    check_conv(xs, ks, bias, stride)?;
    let (oh, ow) = (same_out(xs.h, stride), same_out(xs.w, stride));
    let os = Shape::new(xs.n, ks.n, oh, ow);
    let patches = Patches::new(xs, ks, stride, pad, oh, ow);
    let taps = patches.taps;
    let kd = kernel.data();
    let per_sample = xs.c * xs.plane();
    let mut out = vec![0.0; os.numel()];
    out.par_chunks_mut(os.c * os.plane())
        .zip(x.data().par_chunks(per_sample))
        .for_each(|(dst, sample)| {
            let cols = patches.gather(sample);
            for (co, plane) in dst.chunks_mut(os.plane()).enumerate() {
                let w = &kd[co * taps..][..taps];
                for (d, patch) in plane.iter_mut().zip(cols.chunks(taps)) {
                    let mut acc = bias[co];
                    for (a, b) in w.iter().zip(patch) {
                        acc += a * b;
                    }
                    *d = acc;
                }
            }
        });
    Tensor::from_vec(os, out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: PadMode,
    gy: &Tensor,
) -> (Tensor, Tensor, Vec<f64>) {
    let xs = x.shape();
    let ks = kernel.shape();
    let gs = gy.shape();
    let patches = Patches::new(xs, ks, stride, pad, gs.h, gs.w);
    let taps = patches.taps;
    let kd = kernel.data();
    let per_sample = xs.c * xs.plane();
    let pixels = gs.plane();

    let mut gx = vec![0.0; xs.numel()];
    let partial_gk: Vec<Vec<f64>> = gx
        .par_chunks_mut(per_sample)
        .zip(x.data().par_chunks(per_sample))
        .zip(gy.data().par_chunks(gs.c * pixels))
        .map(|((dx, sample), g)| {
            let cols = patches.gather(sample);
            let mut dcols = vec![0.0; pixels * taps];
            let mut gk = vec![0.0; ks.numel()];
            for co in 0..ks.n {
                let w = &kd[co * taps..][..taps];
                let gkw = &mut gk[co * taps..][..taps];
                for p in 0..pixels {
                    let gv = g[co * pixels + p];
                    if gv == 0.0 {
                        continue;
                    }
                    let patch = &cols[p * taps..][..taps];
                    let dpatch = &mut dcols[p * taps..][..taps];
                    for k in 0..taps {
                        gkw[k] += gv * patch[k];
                        dpatch[k] += gv * w[k];
                    }
                }
            }
            for (o, d) in patches.offsets.iter().zip(&dcols) {
                if let Some(i) = o {
                    dx[*i] += d;
                }
            }
            gk
        })
        .collect();

    let mut gk = vec![0.0; ks.numel()];
    for part in &partial_gk {
        for (a, b) in gk.iter_mut().zip(part) {
            *a += b;
        }
    }
    let gd = gy.data();
    let mut gb = vec![0.0; ks.n];
    for n in 0..gs.n {
        for (co, b) in gb.iter_mut().enumerate() {
            *b += gd[gs.index(n, co, 0, 0)..][..pixels].iter().sum::<f64>();
        }
    }
    (
        Tensor::from_vec(xs, gx).expect("gx shape"),
        Tensor::from_vec(ks, gk).expect("gk shape"),
        gb,
    )
}

/// Transposed convolution without padding. `kernel` is `(ci, co, k, k)`; the
/// output extent is `(h - 1) * stride + k`.
pub fn conv_transpose2d(x: &Tensor, kernel: &Tensor, bias: &[f64], stride: usize) -> Result<Tensor> {
    let xs = x.shape();
    let ks = kernel.shape();
    if xs.c != ks.n {
        return Err(TensorError::shape(
            "conv_transpose2d",
            format!("input channels {} != kernel input channels {}", xs.c, ks.n),
        ));
    }
    if bias.len() != ks.c {
        return Err(TensorError::shape(
            "conv_transpose2d",
            format!("bias length {} != output channels {}", bias.len(), ks.c),
        ));
    }
    if stride == 0 {
        return Err(TensorError::argument("conv_transpose2d", "stride must be >= 1"));
    }
    let os = Shape::new(
        xs.n,
        ks.c,
        (xs.h - 1) * stride + ks.h,
        (xs.w - 1) * stride + ks.w,
    );
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; os.numel()];
    out.par_chunks_mut(os.plane())
        .enumerate()
        .for_each(|(plane, dst)| {
            let (n, co) = (plane / os.c, plane % os.c);
            dst.fill(bias[co]);
            for ci in 0..xs.c {
                let src = &xd[xs.index(n, ci, 0, 0)..][..xs.plane()];
                for ky in 0..ks.h {
                    for kx in 0..ks.w {
                        let wv = kd[ks.index(ci, co, ky, kx)];
                        for iy in 0..xs.h {
                            let oy = iy * stride + ky;
                            for ix in 0..xs.w {
                                dst[oy * os.w + ix * stride + kx] += wv * src[iy * xs.w + ix];
                            }
                        }
                    }
                }
            }
        });
    Tensor::from_vec(os, out)
}

pub fn conv_transpose2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    stride: usize,
    gy: &Tensor,
) -> (Tensor, Tensor, Vec<f64>) {
    let xs = x.shape();
    let ks = kernel.shape();
    let gs = gy.shape();
    let (xd, kd, gd) = (x.data(), kernel.data(), gy.data());

    let mut gx = vec![0.0; xs.numel()];
    gx.par_chunks_mut(xs.plane())
        .enumerate()
        .for_each(|(plane, dst)| {
            let (n, ci) = (plane / xs.c, plane % xs.c);
            for co in 0..ks.c {
                let g = &gd[gs.index(n, co, 0, 0)..][..gs.plane()];
                for ky in 0..ks.h {
                    for kx in 0..ks.w {
                        let wv = kd[ks.index(ci, co, ky, kx)];
                        for iy in 0..xs.h {
                            let oy = iy * stride + ky;
                            for ix in 0..xs.w {
                                dst[iy * xs.w + ix] += wv * g[oy * gs.w + ix * stride + kx];
                            }
                        }
                    }
                }
            }
        });

    let mut gk = vec![0.0; ks.numel()];
    let per_ci = ks.c * ks.h * ks.w;
    gk.par_chunks_mut(per_ci).enumerate().for_each(|(ci, dst)| {
        for n in 0..xs.n {
            let src = &xd[xs.index(n, ci, 0, 0)..][..xs.plane()];
            for co in 0..ks.c {
                let g = &gd[gs.index(n, co, 0, 0)..][..gs.plane()];
                for ky in 0..ks.h {
                    for kx in 0..ks.w {
                        let mut acc = 0.0;
                        for iy in 0..xs.h {
                            let oy = iy * stride + ky;
                            for ix in 0..xs.w {
                                acc += src[iy * xs.w + ix] * g[oy * gs.w + ix * stride + kx];
                            }
                        }
                        dst[(co * ks.h + ky) * ks.w + kx] += acc;
                    }
                }
            }
        }
    });

    let mut gb = vec![0.0; ks.c];
    for n in 0..gs.n {
        for (co, b) in gb.iter_mut().enumerate() {
            *b += gd[gs.index(n, co, 0, 0)..][..gs.plane()].iter().sum::<f64>();
        }
    }
    (
        Tensor::from_vec(xs, gx).expect("gx shape"),
        Tensor::from_vec(ks, gk).expect("gk shape"),
        gb,
    )
}

/// Affine map of `(n, c, 1, 1)` vectors. `weight` is `(co, c, 1, 1)`.
pub fn fully_connected(x: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.h != 1 || xs.w != 1 {
        return Err(TensorError::shape(
            "fully_connected",
            format!("input must be (n, c, 1, 1), got {xs}"),
        ));
    }
    if ws.c != xs.c || ws.h != 1 || ws.w != 1 {
        return Err(TensorError::shape(
            "fully_connected",
            format!("weight {ws} does not accept {} input features", xs.c),
        ));
    }
    if bias.len() != ws.n {
        return Err(TensorError::shape(
            "fully_connected",
            format!("bias length {} != output features {}", bias.len(), ws.n),
        ));
    }
    let (xd, wd) = (x.data(), weight.data());
    let out = Tensor::from_fn(Shape::new(xs.n, ws.n, 1, 1), |n, o, _, _| {
        let row = &wd[o * xs.c..][..xs.c];
        let xv = &xd[n * xs.c..][..xs.c];
        bias[o] + row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>()
    });
    Ok(out)
}

pub fn fully_connected_backward(x: &Tensor, weight: &Tensor, gy: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
    let xs = x.shape();
    let ws = weight.shape();
    let (xd, wd, gd) = (x.data(), weight.data(), gy.data());
    let gx = Tensor::from_fn(xs, |n, c, _, _| {
        (0..ws.n).map(|o| gd[n * ws.n + o] * wd[o * xs.c + c]).sum()
    });
    let gw = Tensor::from_fn(ws, |o, c, _, _| {
        (0..xs.n).map(|n| gd[n * ws.n + o] * xd[n * xs.c + c]).sum()
    });
    let gb = (0..ws.n)
        .map(|o| (0..xs.n).map(|n| gd[n * ws.n + o]).sum())
        .collect();
    (gx, gw, gb)
}

/// Binary element-wise operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Checks that `b` broadcasts onto `a`: each extent equal or 1.
pub fn broadcast_compatible(a: Shape, b: Shape) -> bool {
    a.dims()
        .iter()
        .zip(b.dims())
        .all(|(&da, db)| db == da || db == 1)
}

#[inline]
fn broadcast_index(b: Shape, n: usize, c: usize, h: usize, w: usize) -> usize {
    b.index(
        if b.n == 1 { 0 } else { n },
        if b.c == 1 { 0 } else { c },
        if b.h == 1 { 0 } else { h },
        if b.w == 1 { 0 } else { w },
    )
}

/// `a op b`, where `b` may carry singleton extents that broadcast over `a`.
pub fn elementwise(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if !broadcast_compatible(sa, sb) {
        return Err(TensorError::shape(
            "elementwise",
            format!("{sb} does not broadcast onto {sa}"),
        ));
    }
    let bd = b.data();
    let f = match op {
        BinaryOp::Add => |x: f64, y: f64| x + y,
        BinaryOp::Sub => |x: f64, y: f64| x - y,
        BinaryOp::Mul => |x: f64, y: f64| x * y,
    };
    if sa == sb {
        let data = a.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(sa, data);
    }
    Ok(Tensor::from_fn(sa, |n, c, h, w| {
        f(a.at(n, c, h, w), bd[broadcast_index(sb, n, c, h, w)])
    }))
}

/// Sums a full-size gradient down to the (possibly broadcast) shape `target`.
pub fn reduce_to(g: &Tensor, target: Shape) -> Tensor {
    let gs = g.shape();
    if gs == target {
        return g.clone();
    }
    let mut out = Tensor::zeros(target);
    let od = out.data_mut();
    for n in 0..gs.n {
        for c in 0..gs.c {
            for h in 0..gs.h {
                for w in 0..gs.w {
                    od[broadcast_index(target, n, c, h, w)] += g.at(n, c, h, w);
                }
            }
        }
    }
    out
}

/// Gradients of [`elementwise`] for both operands.
pub fn elementwise_backward(op: BinaryOp, a: &Tensor, b: &Tensor, gy: &Tensor) -> (Tensor, Tensor) {
    let (sa, sb) = (a.shape(), b.shape());
    match op {
        BinaryOp::Add => (gy.clone(), reduce_to(gy, sb)),
        BinaryOp::Sub => (gy.clone(), reduce_to(&gy.map(|v| -v), sb)),
        BinaryOp::Mul => {
            let bd = b.data();
            let ga = Tensor::from_fn(sa, |n, c, h, w| {
                gy.at(n, c, h, w) * bd[broadcast_index(sb, n, c, h, w)]
            });
            let full = Tensor::from_vec(
                sa,
                gy.data().iter().zip(a.data()).map(|(g, x)| g * x).collect(),
            )
            .expect("same shape");
            (ga, reduce_to(&full, sb))
        }
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// `y` is the forward output.
pub fn sigmoid_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    zip_map(y, gy, |s, g| g * s * (1.0 - s))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    zip_map(x, gy, |v, g| if v > 0.0 { g } else { 0.0 })
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

/// Per-pixel maximum over channels, with the winning channel (first on ties).
pub fn channel_max(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape();
    if s.c == 0 {
        return Err(TensorError::Empty("channel_max"));
    }
    let os = Shape::new(s.n, 1, s.h, s.w);
    let mut out = Vec::with_capacity(os.numel());
    let mut arg = Vec::with_capacity(os.numel());
    for n in 0..s.n {
        for h in 0..s.h {
            for w in 0..s.w {
                let mut best = x.at(n, 0, h, w);
                let mut bi = 0;
                for c in 1..s.c {
                    let v = x.at(n, c, h, w);
                    if v > best {
                        best = v;
                        bi = c;
                    }
                }
                out.push(best);
                arg.push(bi);
            }
        }
    }
    Ok((Tensor::from_vec(os, out)?, arg))
}

pub fn channel_max_backward(input: Shape, argmax: &[usize], gy: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input);
    let gs = gy.shape();
    for n in 0..gs.n {
        for h in 0..gs.h {
            for w in 0..gs.w {
                let c = argmax[(n * gs.h + h) * gs.w + w];
                gx.set(n, c, h, w, gy.at(n, 0, h, w));
            }
        }
    }
    gx
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(TensorError::Empty("global_avg_pool"));
    }
    let area = s.plane() as f64;
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().sum::<f64>() / area)
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data)
}

pub fn global_avg_pool_backward(input: Shape, gy: &Tensor) -> Tensor {
    let area = input.plane() as f64;
    Tensor::from_fn(input, |n, c, _, _| gy.at(n, c, 0, 0) / area)
}

/// Source taps of a half-pixel-centred bilinear resize along one axis.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centres, to any positive extent.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(TensorError::argument("resize_bilinear", "empty extent"));
    }
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(x.clone());
    }
    let ty = bilinear_taps(s.h, out_h);
    let tx = bilinear_taps(s.w, out_w);
    Ok(Tensor::from_fn(
        Shape::new(s.n, s.c, out_h, out_w),
        |n, c, oy, ox| {
            let (y0, y1, ly) = ty[oy];
            let (x0, x1, lx) = tx[ox];
            let top = x.at(n, c, y0, x0) * (1.0 - lx) + x.at(n, c, y0, x1) * lx;
            let bot = x.at(n, c, y1, x0) * (1.0 - lx) + x.at(n, c, y1, x1) * lx;
            top * (1.0 - ly) + bot * ly
        },
    ))
}

/// Bilinear upsampling; rejects any request that shrinks an axis.
pub fn upsample_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = x.shape();
    if out_h < s.h || out_w < s.w {
        return Err(TensorError::argument(
            "upsample_bilinear",
            format!("cannot downscale {}x{} to {out_h}x{out_w}", s.h, s.w),
        ));
    }
    resize_bilinear(x, out_h, out_w)
}

pub fn resize_bilinear_backward(input: Shape, gy: &Tensor) -> Tensor {
    let gs = gy.shape();
    if (gs.h, gs.w) == (input.h, input.w) {
        return gy.clone();
    }
    let ty = bilinear_taps(input.h, gs.h);
    let tx = bilinear_taps(input.w, gs.w);
    let mut gx = Tensor::zeros(input);
    let d = gx.data_mut();
    for n in 0..gs.n {
        for c in 0..gs.c {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let g = gy.at(n, c, oy, ox);
                    d[input.index(n, c, y0, x0)] += g * (1.0 - ly) * (1.0 - lx);
                    d[input.index(n, c, y0, x1)] += g * (1.0 - ly) * lx;
                    d[input.index(n, c, y1, x0)] += g * ly * (1.0 - lx);
                    d[input.index(n, c, y1, x1)] += g * ly * lx;
                }
            }
        }
    }
    gx
}

/// Softmax along the last (`w`) axis, max-subtracted.
pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.w == 0 {
        return Err(TensorError::Empty("softmax_lastdim"));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(s.w) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::from_vec(s, out)
}

/// `y` is the forward output.
pub fn softmax_lastdim_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    let w = y.shape().w;
    let mut gx = Vec::with_capacity(y.numel());
    for (yr, gr) in y.data().chunks(w).zip(gy.data().chunks(w)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
    }
    Tensor::from_vec(y.shape(), gx).expect("same shape")
}

/// Swaps the last two axes.
pub fn transpose_last2(x: &Tensor) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, i, j| x.at(n, c, j, i))
}

/// Batched product of `(n, 1, r, k)` and `(n, 1, k, c)` matrix batches.
pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.c != 1 || sb.c != 1 || sa.n != sb.n || sa.w != sb.h {
        return Err(TensorError::shape(
            "bmm",
            format!("cannot multiply {sa} by {sb}"),
        ));
    }
    let (r, k, c) = (sa.h, sa.w, sb.w);
    let os = Shape::new(sa.n, 1, r, c);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; os.numel()];
    out.par_chunks_mut(r * c.max(1))
        .enumerate()
        .for_each(|(n, dst)| {
            let am = &ad[n * r * k..][..r * k];
            let bm = &bd[n * k * c..][..k * c];
            for i in 0..r {
                let drow = &mut dst[i * c..][..c];
                for p in 0..k {
                    let av = am[i * k + p];
                    for (d, bv) in drow.iter_mut().zip(&bm[p * c..][..c]) {
                        *d += av * bv;
                    }
                }
            }
        });
    Tensor::from_vec(os, out)
}

pub fn bmm_backward(a: &Tensor, b: &Tensor, gy: &Tensor) -> (Tensor, Tensor) {
    let ga = bmm(gy, &transpose_last2(b)).expect("bmm grad a");
    let gb = bmm(&transpose_last2(a), gy).expect("bmm grad b");
    (ga, gb)
}

/// Saved statistics of a batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-channel standardization over `(n, h, w)` with batch statistics.
pub fn batchnorm(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Tensor, BatchNormCache)> {
    let s = x.shape();
    if gamma.len() != s.c || beta.len() != s.c {
        return Err(TensorError::shape(
            "batchnorm",
            format!(
                "affine length {}/{} != channels {}",
                gamma.len(),
                beta.len(),
                s.c
            ),
        ));
    }
    let count = s.n * s.plane();
    if count == 0 {
        return Err(TensorError::Empty("batchnorm"));
    }
    let m = count as f64;
    let xd = x.data();
    let mut xhat = vec![0.0; s.numel()];
    let mut y = vec![0.0; s.numel()];
    let mut inv_std = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let planes = || (0..s.n).map(move |n| s.index(n, c, 0, 0)..s.index(n, c, 0, 0) + s.plane());
        let mean = planes().flat_map(|r| xd[r].iter()).sum::<f64>() / m;
        let var = planes()
            .flat_map(|r| xd[r].iter())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / m;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std.push(istd);
        for r in planes() {
            for i in r {
                let h = (xd[i] - mean) * istd;
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    let xhat = Tensor::from_vec(s, xhat)?;
    Ok((Tensor::from_vec(s, y)?, BatchNormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    gy: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let s = gy.shape();
    let m = (s.n * s.plane()) as f64;
    let (xh, gd) = (cache.xhat.data(), gy.data());
    let mut gx = vec![0.0; s.numel()];
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for c in 0..s.c {
        let idx = || (0..s.n).flat_map(move |n| s.index(n, c, 0, 0)..s.index(n, c, 0, 0) + s.plane());
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for i in idx() {
            sum_g += gd[i];
            sum_gx += gd[i] * xh[i];
        }
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        let k = gamma[c] * cache.inv_std[c] / m;
        for i in idx() {
            gx[i] = k * (m * gd[i] - sum_g - xh[i] * sum_gx);
        }
    }
    (Tensor::from_vec(s, gx).expect("same shape"), dgamma, dbeta)
}

/// Concatenates along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(TensorError::Empty("concat"))?.shape();
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(TensorError::shape("concat", format!("{s} vs {first}")));
        }
    }
    let c: usize = parts.iter().map(|p| p.shape().c).sum();
    let os = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(os.numel());
    for n in 0..first.n {
        for p in parts {
            let s = p.shape();
            data.extend_from_slice(&p.data()[s.index(n, 0, 0, 0)..][..s.c * s.plane()]);
        }
    }
    Tensor::from_vec(os, data)
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn concat_channels_backward(parts: &[Shape], gy: &Tensor) -> Vec<Tensor> {
    let gs = gy.shape();
    let mut offset = 0;
    parts
        .iter()
        .map(|&s| {
            let t = Tensor::from_fn(s, |n, c, h, w| gy.at(n, offset + c, h, w));
            offset += s.c;
            debug_assert!(offset <= gs.c);
            t
        })
        .collect()
}

/// Horizontal Sobel kernel, `[[1,0,-1],[2,0,-2],[1,0,-1]]`.
pub const SOBEL_X: [[f64; 3]; 3] = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
/// Vertical Sobel kernel, `[[1,2,1],[0,0,0],[-1,-2,-1]]`.
pub const SOBEL_Y: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];

/// Directional responses saved by [`sobel_magnitude`].
#[derive(Clone, Debug)]
pub struct SobelCache {
    pub gx: Tensor,
    pub gy: Tensor,
}

/// Depthwise Sobel gradient magnitude under replicate padding.
///
/// The sums are grouped so that mirroring the input negates the directional
/// responses bit-exactly, which makes the magnitude exactly flip-equivariant.
pub fn sobel_magnitude(x: &Tensor) -> (Tensor, SobelCache) {
    let s = x.shape();
    let mut gx = Tensor::zeros(s);
    let mut gy = Tensor::zeros(s);
    let mut mag = Tensor::zeros(s);
    let clampi = |i: isize, e: usize| i.clamp(0, e as isize - 1) as usize;
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                let (t, b) = (clampi(h as isize - 1, s.h), clampi(h as isize + 1, s.h));
                for w in 0..s.w {
                    let (l, r) = (clampi(w as isize - 1, s.w), clampi(w as isize + 1, s.w));
                    let p = |yy: usize, xx: usize| x.at(n, c, yy, xx);
                    let dt = p(t, l) - p(t, r);
                    let dm = p(h, l) - p(h, r);
                    let db = p(b, l) - p(b, r);
                    let vx = (dt + db) + 2.0 * dm;
                    let st = (p(t, l) + p(t, r)) + 2.0 * p(t, w);
                    let sb = (p(b, l) + p(b, r)) + 2.0 * p(b, w);
                    let vy = st - sb;
                    gx.set(n, c, h, w, vx);
                    gy.set(n, c, h, w, vy);
                    mag.set(n, c, h, w, (vx * vx + vy * vy).sqrt());
                }
            }
        }
    }
    (mag, SobelCache { gx, gy })
}

/// VJP of [`sobel_magnitude`]; the subgradient at zero magnitude is zero.
pub fn sobel_magnitude_backward(mag: &Tensor, cache: &SobelCache, g: &Tensor) -> Tensor {
    let s = mag.shape();
    let mut dx = Tensor::zeros(s);
    let clampi = |i: isize, e: usize| i.clamp(0, e as isize - 1) as usize;
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                for w in 0..s.w {
                    let m = mag.at(n, c, h, w);
                    if m == 0.0 {
                        continue;
                    }
                    let up = g.at(n, c, h, w) / m;
                    let ax = up * cache.gx.at(n, c, h, w);
                    let ay = up * cache.gy.at(n, c, h, w);
                    for ky in 0..3 {
                        let yy = clampi(h as isize + ky as isize - 1, s.h);
                        for kx in 0..3 {
                            let xx = clampi(w as isize + kx as isize - 1, s.w);
                            let k = ax * SOBEL_X[ky][kx] + ay * SOBEL_Y[ky][kx];
                            if k != 0.0 {
                                let i = s.index(n, c, yy, xx);
                                dx.data_mut()[i] += k;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Clamp floor of the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities `p` against targets `t`.
pub fn bce_mean(p: &Tensor, t: &Tensor, eps: f64) -> Result<f64> {
    if p.shape() != t.shape() {
        return Err(TensorError::shape(
            "bce",
            format!("prediction {} vs target {}", p.shape(), t.shape()),
        ));
    }
    let total: f64 = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&pv, &tv)| {
            let q = pv.clamp(eps, 1.0 - eps);
            -(tv * q.ln() + (1.0 - tv) * (1.0 - q).ln())
        })
        .sum();
    Ok(total / p.numel() as f64)
}

pub fn bce_mean_backward(p: &Tensor, t: &Tensor, eps: f64, g: f64) -> Tensor {
    let m = p.numel() as f64;
    zip_map(p, t, |pv, tv| {
        if pv <= eps || pv >= 1.0 - eps {
            0.0
        } else {
            g * (pv - tv) / (pv * (1.0 - pv)) / m
        }
    })
}

// Matrix-batch entry points.

/// Row-wise softmax of every matrix in the batch.
pub fn softmax_rows(m: &Matrix3) -> Result<Matrix3> {
    Matrix3::from_tensor(&softmax_lastdim(&m.to_tensor())?)
}

pub fn matmul(a: &Matrix3, b: &Matrix3) -> Result<Matrix3> {
    Matrix3::from_tensor(&bmm(&a.to_tensor(), &b.to_tensor())?)
}

pub fn transpose(m: &Matrix3) -> Matrix3 {
    Matrix3::from_tensor(&transpose_last2(&m.to_tensor())).expect("transpose keeps rank")
}

/// `(n, c, h, w)` to `(n, c, h*w)`; element `(n,c,y,x)` lands at column `y*w + x`.
pub fn flatten_spatial(x: &Tensor) -> Matrix3 {
    let s = x.shape();
    Matrix3::from_vec(s.n, s.c, s.plane(), x.data().to_vec()).expect("same count")
}

pub fn unflatten_spatial(m: &Matrix3, h: usize, w: usize) -> Result<Tensor> {
    if h * w != m.cols {
        return Err(TensorError::ElementCount {
            expected: m.cols,
            actual: h * w,
        });
    }
    Tensor::from_vec(Shape::new(m.n, m.rows, h, w), m.data().to_vec())
}
