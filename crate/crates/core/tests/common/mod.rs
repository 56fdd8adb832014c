//! Reference implementations written straight from the definitions, with no
//! shared code paths into the library kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sodkit_core::metrics::{BinaryMask, SaliencyMap};
use sodkit_core::{PadMode, Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: Shape) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

pub fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.shape() == b.shape() && a.max_abs_diff(b) <= tol
}

// ---------------------------------------------------------------- kernels

/// Same-padded cross-correlation. Each output pixel is evaluated from an
/// explicitly padded copy of the input.
pub fn conv2d(x: &Tensor, k: &Tensor, bias: &[f64], stride: usize, pad: PadMode) -> Tensor {
    let xs = x.shape();
    let ks = k.shape();
    let (ph, pw) = (ks.h / 2, ks.w / 2);
    let (hp, wp) = (xs.h + 2 * ph, xs.w + 2 * pw);
    let padded = Tensor::from_fn(Shape::new(xs.n, xs.c, hp, wp), |n, c, y, z| {
        let sy = y as i64 - ph as i64;
        let sx = z as i64 - pw as i64;
        let inside = sy >= 0 && sy < xs.h as i64 && sx >= 0 && sx < xs.w as i64;
        match pad {
            PadMode::Zero if !inside => 0.0,
            _ => x.at(
                n,
                c,
                sy.clamp(0, xs.h as i64 - 1) as usize,
                sx.clamp(0, xs.w as i64 - 1) as usize,
            ),
        }
    });
    let oh = (xs.h + stride - 1) / stride;
    let ow = (xs.w + stride - 1) / stride;
    let mut out = Tensor::zeros(Shape::new(xs.n, ks.n, oh, ow));
    for n in 0..xs.n {
        for co in 0..ks.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..ks.c {
                        for ky in 0..ks.h {
                            for kx in 0..ks.w {
                                acc += k.at(co, ci, ky, kx)
                                    * padded.at(n, ci, oy * stride + ky, ox * stride + kx);
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution in gather form: every output pixel collects the
/// input pixels whose scattered footprint covers it.
pub fn conv_transpose2d(x: &Tensor, k: &Tensor, bias: &[f64], stride: usize) -> Tensor {
    let xs = x.shape();
    let ks = k.shape();
    let oh = (xs.h - 1) * stride + ks.h;
    let ow = (xs.w - 1) * stride + ks.w;
    Tensor::from_fn(Shape::new(xs.n, ks.c, oh, ow), |n, co, oy, ox| {
        let mut acc = bias[co];
        for ci in 0..xs.c {
            for ky in 0..ks.h {
                for kx in 0..ks.w {
                    if oy < ky || ox < kx || (oy - ky) % stride != 0 || (ox - kx) % stride != 0 {
                        continue;
                    }
                    let (iy, ix) = ((oy - ky) / stride, (ox - kx) / stride);
                    if iy < xs.h && ix < xs.w {
                        acc += x.at(n, ci, iy, ix) * k.at(ci, co, ky, kx);
                    }
                }
            }
        }
        acc
    })
}

pub fn fully_connected(x: &Tensor, w: &Tensor, bias: &[f64]) -> Tensor {
    let (n, c, co) = (x.shape().n, x.shape().c, w.shape().n);
    let mut out = Tensor::zeros(Shape::new(n, co, 1, 1));
    for b in 0..n {
        for o in 0..co {
            let mut acc = bias[o];
            for i in 0..c {
                acc += w.at(o, i, 0, 0) * x.at(b, i, 0, 0);
            }
            out.set(b, o, 0, 0, acc);
        }
    }
    out
}

pub fn bmm(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    let mut out = Tensor::zeros(Shape::new(sa.n, 1, sa.h, sb.w));
    for n in 0..sa.n {
        for i in 0..sa.h {
            for j in 0..sb.w {
                let mut acc = 0.0;
                for p in 0..sa.w {
                    acc += a.at(n, 0, i, p) * b.at(n, 0, p, j);
                }
                out.set(n, 0, i, j, acc);
            }
        }
    }
    out
}

/// Materializes `b` at the full shape, then multiplies.
pub fn broadcast_mul(a: &Tensor, b: &Tensor) -> Tensor {
    let sb = b.shape();
    let expanded = Tensor::from_fn(a.shape(), |n, c, h, w| {
        b.at(n % sb.n, c % sb.c, h % sb.h, w % sb.w)
    });
    let data = a.data().iter().zip(expanded.data()).map(|(x, y)| x * y).collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

/// Half-pixel bilinear sample of one plane at output pixel `(oy, ox)`.
pub fn bilinear_pixel(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize, oy: usize, ox: usize) -> f64 {
    let src = |o: usize, inp: usize, out: usize| -> (usize, usize, f64) {
        let mut p = (o as f64 + 0.5) * inp as f64 / out as f64 - 0.5;
        if p < 0.0 {
            p = 0.0;
        }
        let i0 = p as usize;
        let i0 = if i0 > inp - 1 { inp - 1 } else { i0 };
        let i1 = if i0 + 1 > inp - 1 { inp - 1 } else { i0 + 1 };
        (i0, i1, p - i0 as f64)
    };
    let (y0, y1, fy) = src(oy, h, oh);
    let (x0, x1, fx) = src(ox, w, ow);
    let v = |y: usize, x: usize| plane[y * w + x];
    (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1))
}

pub fn resize(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, oh, ow), |n, c, y, z| {
        let start = s.index(n, c, 0, 0);
        bilinear_pixel(&x.data()[start..start + s.plane()], s.h, s.w, oh, ow, y, z)
    })
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, h, w| {
        let z: f64 = (0..s.w).map(|j| x.at(n, c, h, j).exp()).sum();
        x.at(n, c, h, w).exp() / z
    })
}

/// Two-pass batch statistics per channel.
pub fn batchnorm(x: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor {
    let s = x.shape();
    let count = (s.n * s.h * s.w) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            for h in 0..s.h {
                for w in 0..s.w {
                    mean[c] += x.at(n, c, h, w);
                }
            }
        }
        mean[c] /= count;
        for n in 0..s.n {
            for h in 0..s.h {
                for w in 0..s.w {
                    var[c] += (x.at(n, c, h, w) - mean[c]).powi(2);
                }
            }
        }
        var[c] /= count;
    }
    Tensor::from_fn(s, |n, c, h, w| {
        gamma[c] * (x.at(n, c, h, w) - mean[c]) / (var[c] + eps).sqrt() + beta[c]
    })
}

pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, 1, 1), |n, c, _, _| {
        let mut acc = 0.0;
        for h in 0..s.h {
            for w in 0..s.w {
                acc += x.at(n, c, h, w);
            }
        }
        acc / (s.h * s.w) as f64
    })
}

pub fn channel_max(x: &Tensor) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, h, w| {
        (0..s.c).map(|c| x.at(n, c, h, w)).fold(f64::NEG_INFINITY, f64::max)
    })
}

const KX: [[f64; 3]; 3] = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
const KY: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];

/// Depthwise Sobel magnitude via two replicate-padded 3x3 correlations.
pub fn sobel(x: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let single = Tensor::from_fn(Shape::new(1, 1, s.h, s.w), |_, _, h, w| x.at(n, c, h, w));
            let kx = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, i, j| KX[i][j]);
            let ky = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, i, j| KY[i][j]);
            let gx = conv2d(&single, &kx, &[0.0], 1, PadMode::Replicate);
            let gy = conv2d(&single, &ky, &[0.0], 1, PadMode::Replicate);
            for h in 0..s.h {
                for w in 0..s.w {
                    let (a, b) = (gx.at(0, 0, h, w), gy.at(0, 0, h, w));
                    out.set(n, c, h, w, (a * a + b * b).sqrt());
                }
            }
        }
    }
    out
}

pub fn bce(p: &Tensor, t: &Tensor, eps: f64) -> f64 {
    let mut acc = 0.0;
    for (&pv, &tv) in p.data().iter().zip(t.data()) {
        let q = pv.max(eps).min(1.0 - eps);
        acc -= tv * q.ln() + (1.0 - tv) * (1.0 - q).ln();
    }
    acc / p.numel() as f64
}

// ---------------------------------------------------------------- metrics

pub fn random_pair(rng: &mut impl Rng, h: usize, w: usize) -> (SaliencyMap, BinaryMask) {
    let quantized = rng.random_bool(0.5);
    let s: Vec<f64> = (0..h * w)
        .map(|_| {
            if quantized {
                rng.random_range(0..=255u32) as f64 / 255.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let p = rng.random_range(0.1..0.9);
    let mut g: Vec<bool> = (0..h * w).map(|_| rng.random_bool(p)).collect();
    // Keep both classes present so the general branch is exercised.
    g[0] = true;
    g[h * w - 1] = false;
    (SaliencyMap::new(h, w, s).unwrap(), BinaryMask::new(h, w, g).unwrap())
}

pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

pub fn recount(s: &SaliencyMap, g: &BinaryMask, tau: f64) -> Counts {
    let mut c = Counts { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for i in 0..s.data().len() {
        let pred = s.data()[i] >= tau;
        let truth = g.data()[i];
        if pred && truth {
            c.tp += 1;
        } else if pred {
            c.fp += 1;
        } else if truth {
            c.fn_ += 1;
        } else {
            c.tn += 1;
        }
    }
    c
}

pub fn precision_recall_f(c: &Counts, beta2: f64) -> (f64, f64, f64) {
    let p = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let r = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    let f = if beta2 * p + r == 0.0 { 0.0 } else { (1.0 + beta2) * p * r / (beta2 * p + r) };
    (p, r, f)
}

/// Enhanced alignment evaluated pixel by pixel.
pub fn e_measure(s: &SaliencyMap, g: &BinaryMask, tau: f64) -> f64 {
    let n = s.data().len();
    let fm: Vec<f64> = s.data().iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect();
    let gt: Vec<f64> = g.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let gt_sum: f64 = gt.iter().sum();
    let enhanced: Vec<f64> = if gt_sum == 0.0 {
        fm.iter().map(|v| 1.0 - v).collect()
    } else if gt_sum == n as f64 {
        fm.clone()
    } else {
        let mfm = fm.iter().sum::<f64>() / n as f64;
        let mgt = gt_sum / n as f64;
        (0..n)
            .map(|i| {
                let a = fm[i] - mfm;
                let b = gt[i] - mgt;
                let phi = 2.0 * a * b / (a * a + b * b + 1e-8);
                (phi + 1.0) * (phi + 1.0) / 4.0
            })
            .collect()
    };
    enhanced.iter().sum::<f64>() / n as f64
}

pub fn mae(s: &SaliencyMap, g: &BinaryMask) -> f64 {
    let mut acc = 0.0;
    for i in 0..s.data().len() {
        acc += (s.data()[i] - if g.data()[i] { 1.0 } else { 0.0 }).abs();
    }
    acc / s.data().len() as f64
}

const EPS: f64 = f64::EPSILON;

fn object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    let sigma = (ss / (n - 1.0 + EPS)).sqrt();
    2.0 * mean / (mean * mean + 1.0 + 2.0 * sigma + EPS)
}

fn structure(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
        cxy += (x[i] - mx) * (y[i] - my);
    }
    let d = n - 1.0 + EPS;
    let (vx, vy, cxy) = (vx / d, vy / d, cxy / d);
    let num = 4.0 * mx * my * cxy;
    let den = (mx * mx + my * my) * (vx + vy);
    if num == 0.0 && den == 0.0 {
        1.0
    } else if num == 0.0 {
        0.0
    } else {
        num / (den + EPS)
    }
}

/// Structure measure: object term on the foreground and background, region
/// term on the four blocks cut through the ground-truth centroid.
pub fn s_measure(s: &SaliencyMap, g: &BinaryMask, alpha: f64) -> f64 {
    let (h, w) = (g.height(), g.width());
    let n = h * w;
    let fg_count = g.data().iter().filter(|&&b| b).count();
    let mean_s = s.data().iter().sum::<f64>() / n as f64;
    if fg_count == 0 {
        return (1.0 - mean_s).clamp(0.0, 1.0);
    }
    if fg_count == n {
        return mean_s.clamp(0.0, 1.0);
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for i in 0..n {
        if g.data()[i] {
            fg.push(s.data()[i]);
        } else {
            bg.push(1.0 - s.data()[i]);
        }
    }
    let mu = fg_count as f64 / n as f64;
    let so = mu * object(&fg) + (1.0 - mu) * object(&bg);

    let (mut cy, mut cx) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if g.data()[r * w + c] {
                cy += (r + 1) as f64;
                cx += (c + 1) as f64;
            }
        }
    }
    let (cy, cx) = (cy / fg_count as f64, cx / fg_count as f64);
    // A centre exactly on the centroid may go either way; average both.
    let sides = |centroid: f64| -> Vec<bool> {
        if centroid.fract() == 0.0 {
            vec![false, true]
        } else {
            vec![false]
        }
    };
    let mut region_terms = Vec::new();
    for &row_inclusive in &sides(cy) {
        for &col_inclusive in &sides(cx) {
            let before = |pos: usize, centroid: f64, inclusive: bool| {
                let p = (pos + 1) as f64;
                p < centroid || (inclusive && p == centroid)
            };
            let mut sr = 0.0;
            for (top, left) in [(true, true), (true, false), (false, true), (false, false)] {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for r in 0..h {
                    for c in 0..w {
                        if before(r, cy, row_inclusive) == top && before(c, cx, col_inclusive) == left {
                            xs.push(s.data()[r * w + c]);
                            ys.push(if g.data()[r * w + c] { 1.0 } else { 0.0 });
                        }
                    }
                }
                if !xs.is_empty() {
                    sr += xs.len() as f64 / n as f64 * structure(&xs, &ys);
                }
            }
            region_terms.push(sr);
        }
    }
    let sr = region_terms.iter().sum::<f64>() / region_terms.len() as f64;
    (alpha * so + (1.0 - alpha) * sr).clamp(0.0, 1.0)
}

/// Full per-image score vector and curve from the oracles above.
pub struct OracleReport {
    pub scores: [f64; 8],
    /// `(precision, recall, f, e)` per threshold.
    pub curve: Vec<(f64, f64, f64, f64)>,
}

pub fn report(s: &SaliencyMap, g: &BinaryMask) -> OracleReport {
    let beta2 = 0.3;
    let curve: Vec<_> = (0..256)
        .map(|t| {
            let tau = t as f64 / 255.0;
            let (p, r, f) = precision_recall_f(&recount(s, g, tau), beta2);
            (p, r, f, e_measure(s, g, tau))
        })
        .collect();
    let f_max = curve.iter().map(|c| c.2).fold(0.0, f64::max);
    let e_max = curve.iter().map(|c| c.3).fold(0.0, f64::max);
    let f_mean = curve[1..].iter().map(|c| c.2).sum::<f64>() / 255.0;
    let e_mean = curve[1..].iter().map(|c| c.3).sum::<f64>() / 255.0;
    let mean_s = s.data().iter().sum::<f64>() / s.data().len() as f64;
    let tau = (2.0 * mean_s).min(1.0);
    let f_adp = precision_recall_f(&recount(s, g, tau), beta2).2;
    let e_adp = e_measure(s, g, tau);
    OracleReport {
        scores: [mae(s, g), s_measure(s, g, 0.5), f_max, f_mean, f_adp, e_max, e_mean, e_adp],
        curve,
    }
}

// ---------------------------------------------------------------- random cases

pub struct ConvCase {
    pub x: Tensor,
    pub k: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub pad: PadMode,
}

pub fn conv_case(rng: &mut impl Rng) -> ConvCase {
    let n = rng.random_range(1..=2);
    let ci = rng.random_range(1..=4);
    let co = rng.random_range(1..=4);
    let h = rng.random_range(1..=6);
    let w = rng.random_range(1..=6);
    let kh = [1, 3, 5][rng.random_range(0..3)];
    let kw = [1, 3, 5][rng.random_range(0..3)];
    ConvCase {
        x: random_tensor(rng, Shape::new(n, ci, h, w)),
        k: random_tensor(rng, Shape::new(co, ci, kh, kw)),
        bias: (0..co).map(|_| rng.random_range(-1.0..1.0)).collect(),
        stride: rng.random_range(1..=2),
        pad: if rng.random_bool(0.5) { PadMode::Zero } else { PadMode::Replicate },
    }
}

/// `(x, kernel, bias, stride)` for a transposed convolution.
pub fn transpose_case(rng: &mut impl Rng) -> (Tensor, Tensor, Vec<f64>, usize) {
    let n = rng.random_range(1..=2);
    let ci = rng.random_range(1..=4);
    let co = rng.random_range(1..=4);
    let k = rng.random_range(1..=3);
    let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
    let x = random_tensor(rng, Shape::new(n, ci, h, w));
    let kernel = random_tensor(rng, Shape::new(ci, co, k, k));
    let bias = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
    (x, kernel, bias, rng.random_range(1..=2))
}

pub fn fc_case(rng: &mut impl Rng) -> (Tensor, Tensor, Vec<f64>) {
    let n = rng.random_range(1..=3);
    let c = rng.random_range(1..=8);
    let co = rng.random_range(1..=8);
    let x = random_tensor(rng, Shape::new(n, c, 1, 1));
    let w = random_tensor(rng, Shape::new(co, c, 1, 1));
    (x, w, (0..co).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn bmm_case(rng: &mut impl Rng) -> (Tensor, Tensor) {
    let n = rng.random_range(1..=3);
    let (r, k, c) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=6));
    (
        random_tensor(rng, Shape::new(n, 1, r, k)),
        random_tensor(rng, Shape::new(n, 1, k, c)),
    )
}
