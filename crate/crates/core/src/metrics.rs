//! Saliency evaluation: MAE, S-measure, F-measure and E-measure with their
//! 256-threshold curves, plus dataset aggregation.
//!
//! Maps are binarized as `s >= t / 255` for `t = 0..=255`. Maxima range over
//! all 256 rows; the `*_mean` scalars average the 255 rows with a positive
//! threshold, since the `t = 0` row marks every pixel as foreground
//! regardless of the prediction.

use crate::error::{Result, TensorError};

/// Object/region balance of the S-measure.
pub const ALPHA: f64 = 0.5;
/// Precision weight of the F-measure.
pub const BETA2: f64 = 0.3;
/// Number of binarization thresholds.
pub const THRESHOLDS: usize = 256;
/// Denominator guard of the E-measure alignment term.
pub const E_EPS: f64 = 1e-8;
/// Denominator guard of the S-measure terms.
pub const S_EPS: f64 = f64::EPSILON;
/// Guard used when stretching out-of-range maps into `[0, 1]`.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// Threshold of row `t`.
pub fn threshold(t: usize) -> f64 {
    t as f64 / 255.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    /// Row-major values that must already lie in `[0, 1]`.
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        check_len("saliency map", h, w, data.len())?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(TensorError::argument(
                "saliency map",
                format!("value {v} outside [0, 1]"),
            ));
        }
        Ok(SaliencyMap { h, w, data })
    }

    /// Accepts any finite values; when they leave `[0, 1]` the map is
    /// stretched by `(s - min) / (max - min + eps)`.
    pub fn normalized(h: usize, w: usize, mut data: Vec<f64>) -> Result<Self> {
        check_len("saliency map", h, w, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::argument("saliency map", "non-finite value"));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in &mut data {
                *v = (*v - lo) / (hi - lo + NORMALIZE_EPS);
            }
        }
        Ok(SaliencyMap { h, w, data })
    }

    /// 8-bit samples divided by 255.
    pub fn from_gray8(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        SaliencyMap::new(h, w, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn flip_horizontal(&self) -> Self {
        SaliencyMap {
            h: self.h,
            w: self.w,
            data: flip_rows(&self.data, self.w),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        check_len("binary mask", h, w, data.len())?;
        Ok(BinaryMask { h, w, data })
    }

    /// Values must be exactly 0 or 1.
    pub fn from_values(h: usize, w: usize, values: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len());
        for &v in values {
            if v == 0.0 || v == 1.0 {
                data.push(v == 1.0);
            } else {
                return Err(TensorError::argument("binary mask", format!("value {v} is not 0 or 1")));
            }
        }
        BinaryMask::new(h, w, data)
    }

    /// 8-bit ground truth; samples of 128 and above are foreground.
    pub fn from_gray8(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        BinaryMask::new(h, w, bytes.iter().map(|&b| b >= 128).collect())
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&g| g).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        BinaryMask {
            h: self.h,
            w: self.w,
            data: flip_rows(&self.data, self.w),
        }
    }
}

fn flip_rows<T: Clone>(data: &[T], w: usize) -> Vec<T> {
    data.chunks(w.max(1))
        .flat_map(|row| row.iter().rev().cloned())
        .collect()
}

fn check_len(what: &'static str, h: usize, w: usize, len: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(TensorError::Empty(what));
    }
    if h * w != len {
        return Err(TensorError::ElementCount {
            expected: h * w,
            actual: len,
        });
    }
    Ok(())
}

fn check_dims(op: &'static str, s: &SaliencyMap, g: &BinaryMask) -> Result<()> {
    if (s.h, s.w) != (g.h, g.w) {
        return Err(TensorError::shape(
            op,
            format!("prediction {}x{} vs ground truth {}x{}", s.h, s.w, g.h, g.w),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CurveRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub e: f64,
}

/// One row per threshold `t / 255`, `t = 0..=255`.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve256 {
    rows: Vec<CurveRow>,
}

impl Curve256 {
    pub fn from_rows(rows: Vec<CurveRow>) -> Result<Self> {
        if rows.len() != THRESHOLDS {
            return Err(TensorError::ElementCount {
                expected: THRESHOLDS,
                actual: rows.len(),
            });
        }
        Ok(Curve256 { rows })
    }

    pub fn rows(&self) -> &[CurveRow] {
        &self.rows
    }

    pub fn max_f(&self) -> f64 {
        self.rows.iter().map(|r| r.f).fold(0.0, f64::max)
    }

    pub fn max_e(&self) -> f64 {
        self.rows.iter().map(|r| r.e).fold(0.0, f64::max)
    }

    /// Mean F over the rows with a positive threshold.
    pub fn mean_f(&self) -> f64 {
        self.rows[1..].iter().map(|r| r.f).sum::<f64>() / (THRESHOLDS - 1) as f64
    }

    pub fn mean_e(&self) -> f64 {
        self.rows[1..].iter().map(|r| r.e).sum::<f64>() / (THRESHOLDS - 1) as f64
    }

    /// Column-wise mean of several curves.
    pub fn mean(curves: &[&Curve256]) -> Result<Curve256> {
        if curves.is_empty() {
            return Err(TensorError::Empty("curve mean"));
        }
        let k = curves.len() as f64;
        let rows = (0..THRESHOLDS)
            .map(|t| {
                let mut r = CurveRow {
                    threshold: threshold(t),
                    ..CurveRow::default()
                };
                for c in curves {
                    let x = &c.rows[t];
                    r.precision += x.precision;
                    r.recall += x.recall;
                    r.f += x.f;
                    r.e += x.e;
                }
                r.precision /= k;
                r.recall /= k;
                r.f /= k;
                r.e /= k;
                r
            })
            .collect();
        Ok(Curve256 { rows })
    }
}

/// Conditions recorded alongside an image's scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricFlag {
    /// The ground truth has no foreground; F values are reported as 0.
    EmptyGroundTruth,
    /// Nothing survives the adaptive threshold; the adaptive F is 0.
    EmptyAdaptivePrediction,
}

impl MetricFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricFlag::EmptyGroundTruth => "empty_ground_truth",
            MetricFlag::EmptyAdaptivePrediction => "empty_adaptive_prediction",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub s_alpha: f64,
    pub f_max: f64,
    pub f_mean: f64,
    pub f_adp: f64,
    pub e_max: f64,
    pub e_mean: f64,
    pub e_adp: f64,
    pub curve: Curve256,
    /// Mean over images of each image's own curve maximum.
    pub f_max_per_image: f64,
    pub e_max_per_image: f64,
    pub alpha: f64,
    pub beta2: f64,
    pub flags: Vec<MetricFlag>,
}

impl MetricReport {
    /// The eight headline scores in table order.
    pub fn scores(&self) -> [f64; 8] {
        [
            self.mae,
            self.s_alpha,
            self.f_max,
            self.f_mean,
            self.f_adp,
            self.e_max,
            self.e_mean,
            self.e_adp,
        ]
    }
}

pub fn mae(s: &SaliencyMap, g: &BinaryMask) -> Result<f64> {
    check_dims("mae", s, g)?;
    let total: f64 = s
        .data
        .iter()
        .zip(&g.data)
        .map(|(&v, &b)| (v - b as u8 as f64).abs())
        .sum();
    Ok(total / s.data.len() as f64)
}

/// Mean absolute difference of two maps.
pub fn mae_maps(a: &SaliencyMap, b: &SaliencyMap) -> Result<f64> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(TensorError::shape("mae", "map dimensions differ"));
    }
    let total: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.data.len() as f64)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0 + S_EPS);
    (mean, var.sqrt())
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    if values.clone().next().is_none() {
        return 0.0;
    }
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + 2.0 * sigma + S_EPS)
}

fn s_object(s: &SaliencyMap, g: &BinaryMask) -> f64 {
    let mu = g.foreground() as f64 / g.data.len() as f64;
    let pairs = s.data.iter().zip(&g.data);
    let fg = object_score(pairs.clone().filter(|(_, &b)| b).map(|(&v, _)| v));
    let bg = object_score(pairs.filter(|(_, &b)| !b).map(|(&v, _)| 1.0 - v));
    mu * fg + (1.0 - mu) * bg
}

/// Quadrant cuts at the ground-truth centroid, as `(columns, rows)` lists
/// of how many leading columns (rows) fall before the cut.
///
/// A pixel is before the cut when its 1-based centre lies strictly below the
/// centroid. When the centroid sits exactly on a pixel centre both choices
/// are returned and the region term averages them, which keeps the measure
/// exactly invariant under mirroring.
pub fn centroid_cuts(g: &BinaryMask) -> (Vec<usize>, Vec<usize>) {
    let total = g.foreground();
    if total == 0 {
        return (vec![g.w / 2], vec![g.h / 2]);
    }
    let (mut sx, mut sy) = (0usize, 0usize);
    for (i, _) in g.data.iter().enumerate().filter(|(_, &b)| b) {
        sy += i / g.w + 1;
        sx += i % g.w + 1;
    }
    let cuts = |sum: usize| {
        if sum.is_multiple_of(total) {
            vec![sum / total - 1, sum / total]
        } else {
            vec![sum / total]
        }
    };
    (cuts(sx), cuts(sy))
}

/// SSIM-like structure term of one region.
fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let denom = n - 1.0 + S_EPS;
    let sx2 = pred.iter().map(|v| (v - x).powi(2)).sum::<f64>() / denom;
    let sy2 = gt.iter().map(|v| (v - y).powi(2)).sum::<f64>() / denom;
    let sxy = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a - x) * (b - y))
        .sum::<f64>()
        / denom;
    let num = 4.0 * x * y * sxy;
    let den = (x * x + y * y) * (sx2 + sy2);
    if num != 0.0 {
        num / (den + S_EPS)
    } else if den == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(s: &SaliencyMap, g: &BinaryMask) -> f64 {
    let (xs, ys) = centroid_cuts(g);
    let mut total = 0.0;
    for &x in &xs {
        for &y in &ys {
            total += s_region_at(s, g, x, y);
        }
    }
    total / (xs.len() * ys.len()) as f64
}

fn s_region_at(s: &SaliencyMap, g: &BinaryMask, x: usize, y: usize) -> f64 {
    let (h, w) = (g.h, g.w);
    let area = (h * w) as f64;
    let quads = [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)];
    let mut total = 0.0;
    for (r0, r1, c0, c1) in quads {
        if r1 <= r0 || c1 <= c0 {
            continue;
        }
        let mut pred = Vec::with_capacity((r1 - r0) * (c1 - c0));
        let mut gt = Vec::with_capacity(pred.capacity());
        for r in r0..r1 {
            for c in c0..c1 {
                pred.push(s.data[r * w + c]);
                gt.push(g.data[r * w + c] as u8 as f64);
            }
        }
        let weight = pred.len() as f64 / area;
        total += weight * ssim(&pred, &gt);
    }
    total
}

/// Structure measure `alpha * S_o + (1 - alpha) * S_r`, clamped to `[0, 1]`.
pub fn s_measure(s: &SaliencyMap, g: &BinaryMask, alpha: f64) -> Result<f64> {
    check_dims("s_measure", s, g)?;
    let mean_s = s.data.iter().sum::<f64>() / s.data.len() as f64;
    let fg = g.foreground();
    let value = if fg == 0 {
        1.0 - mean_s
    } else if fg == g.data.len() {
        mean_s
    } else {
        alpha * s_object(s, g) + (1.0 - alpha) * s_region(s, g)
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Confusion counts of one binarization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_binarized(s: &SaliencyMap, g: &BinaryMask, tau: f64) -> Confusion {
        let mut c = Confusion::default();
        for (&v, &b) in s.data.iter().zip(&g.data) {
            match (v >= tau, b) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_measure(&self, beta2: f64) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        let den = beta2 * p + r;
        if den == 0.0 {
            0.0
        } else {
            (1.0 + beta2) * p * r / den
        }
    }

    /// Mean enhanced alignment of the binarized map against the ground
    /// truth. Every pixel falls into one of four (prediction, truth)
    /// classes, so the sum collapses onto the confusion counts.
    pub fn e_measure(&self) -> f64 {
        let n = self.total() as f64;
        let gt_fg = self.tp + self.fn_;
        let fm_fg = (self.tp + self.fp) as f64;
        if gt_fg == 0 {
            return self.tn as f64 / n;
        }
        if gt_fg == self.total() {
            return self.tp as f64 / n;
        }
        let mean_fm = fm_fg / n;
        let mean_gt = gt_fg as f64 / n;
        let phi = |fm: f64, gt: f64| {
            let (a, b) = (fm - mean_fm, gt - mean_gt);
            let align = 2.0 * a * b / (a * a + b * b + E_EPS);
            (align + 1.0).powi(2) / 4.0
        };
        (self.tp as f64 * phi(1.0, 1.0)
            + self.fp as f64 * phi(1.0, 0.0)
            + self.fn_ as f64 * phi(0.0, 1.0)
            + self.tn as f64 * phi(0.0, 0.0))
            / n
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Largest row index whose threshold the value reaches.
fn threshold_bin(v: f64) -> usize {
    let mut k = ((v * 255.0).floor().max(0.0) as usize).min(THRESHOLDS - 1);
    while k + 1 < THRESHOLDS && threshold(k + 1) <= v {
        k += 1;
    }
    while k > 0 && threshold(k) > v {
        k -= 1;
    }
    k
}

/// Confusion counts at every threshold, from one pass over the pixels.
pub fn confusion_curve(s: &SaliencyMap, g: &BinaryMask) -> Result<Vec<Confusion>> {
    check_dims("confusion_curve", s, g)?;
    let mut fg_hist = [0usize; THRESHOLDS];
    let mut bg_hist = [0usize; THRESHOLDS];
    for (&v, &b) in s.data.iter().zip(&g.data) {
        let k = threshold_bin(v);
        if b {
            fg_hist[k] += 1;
        } else {
            bg_hist[k] += 1;
        }
    }
    let gt_fg = g.foreground();
    let gt_bg = g.data.len() - gt_fg;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = vec![Confusion::default(); THRESHOLDS];
    for t in (0..THRESHOLDS).rev() {
        tp += fg_hist[t];
        fp += bg_hist[t];
        out[t] = Confusion {
            tp,
            fp,
            fn_: gt_fg - tp,
            tn: gt_bg - fp,
        };
    }
    Ok(out)
}

/// `min(2 * mean(s), 1)`.
pub fn adaptive_threshold(s: &SaliencyMap) -> f64 {
    (2.0 * s.data.iter().sum::<f64>() / s.data.len() as f64).min(1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FMeasureSuite {
    /// `(threshold, precision, recall, f)` per row.
    pub curve: Vec<(f64, f64, f64, f64)>,
    pub f_max: f64,
    pub f_mean: f64,
    pub f_adp: f64,
    pub flags: Vec<MetricFlag>,
}

pub fn f_measure_suite(s: &SaliencyMap, g: &BinaryMask, beta2: f64) -> Result<FMeasureSuite> {
    let counts = confusion_curve(s, g)?;
    let curve: Vec<_> = counts
        .iter()
        .enumerate()
        .map(|(t, c)| (threshold(t), c.precision(), c.recall(), c.f_measure(beta2)))
        .collect();
    let f_max = curve.iter().map(|r| r.3).fold(0.0, f64::max);
    let f_mean = curve[1..].iter().map(|r| r.3).sum::<f64>() / (THRESHOLDS - 1) as f64;
    let adaptive = Confusion::from_binarized(s, g, adaptive_threshold(s));
    let mut flags = Vec::new();
    if g.foreground() == 0 {
        flags.push(MetricFlag::EmptyGroundTruth);
    }
    if adaptive.tp + adaptive.fp == 0 {
        flags.push(MetricFlag::EmptyAdaptivePrediction);
    }
    Ok(FMeasureSuite {
        curve,
        f_max,
        f_mean,
        f_adp: adaptive.f_measure(beta2),
        flags,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EMeasureSuite {
    /// `(threshold, e)` per row.
    pub curve: Vec<(f64, f64)>,
    pub e_max: f64,
    pub e_mean: f64,
    pub e_adp: f64,
}

pub fn e_measure_suite(s: &SaliencyMap, g: &BinaryMask) -> Result<EMeasureSuite> {
    let counts = confusion_curve(s, g)?;
    let curve: Vec<_> = counts
        .iter()
        .enumerate()
        .map(|(t, c)| (threshold(t), c.e_measure()))
        .collect();
    let e_max = curve.iter().map(|r| r.1).fold(0.0, f64::max);
    let e_mean = curve[1..].iter().map(|r| r.1).sum::<f64>() / (THRESHOLDS - 1) as f64;
    let e_adp = Confusion::from_binarized(s, g, adaptive_threshold(s)).e_measure();
    Ok(EMeasureSuite {
        curve,
        e_max,
        e_mean,
        e_adp,
    })
}

/// All eight scores and both curves of one prediction.
pub fn evaluate_pair(s: &SaliencyMap, g: &BinaryMask) -> Result<MetricReport> {
    evaluate_pair_with(s, g, ALPHA, BETA2)
}

pub fn evaluate_pair_with(
    s: &SaliencyMap,
    g: &BinaryMask,
    alpha: f64,
    beta2: f64,
) -> Result<MetricReport> {
    let m = mae(s, g)?;
    let sa = s_measure(s, g, alpha)?;
    let f = f_measure_suite(s, g, beta2)?;
    let e = e_measure_suite(s, g)?;
    let rows = f
        .curve
        .iter()
        .zip(&e.curve)
        .map(|(&(threshold, precision, recall, f), &(_, e))| CurveRow {
            threshold,
            precision,
            recall,
            f,
            e,
        })
        .collect();
    Ok(MetricReport {
        mae: m,
        s_alpha: sa,
        f_max: f.f_max,
        f_mean: f.f_mean,
        f_adp: f.f_adp,
        e_max: e.e_max,
        e_mean: e.e_mean,
        e_adp: e.e_adp,
        curve: Curve256 { rows },
        f_max_per_image: f.f_max,
        e_max_per_image: e.e_max,
        alpha,
        beta2,
        flags: f.flags,
    })
}

/// Dataset-level report: means of every scalar and curve column, with the
/// maxima taken on the mean curve.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    let first = reports.first().ok_or(TensorError::Empty("aggregate"))?;
    let k = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let curve = Curve256::mean(&reports.iter().map(|r| &r.curve).collect::<Vec<_>>())?;
    let mut flags: Vec<MetricFlag> = reports.iter().flat_map(|r| r.flags.iter().copied()).collect();
    flags.sort();
    flags.dedup();
    Ok(MetricReport {
        mae: mean(|r| r.mae),
        s_alpha: mean(|r| r.s_alpha),
        f_max: curve.max_f(),
        f_mean: mean(|r| r.f_mean),
        f_adp: mean(|r| r.f_adp),
        e_max: curve.max_e(),
        e_mean: mean(|r| r.e_mean),
        e_adp: mean(|r| r.e_adp),
        curve,
        f_max_per_image: mean(|r| r.f_max_per_image),
        e_max_per_image: mean(|r| r.e_max_per_image),
        alpha: first.alpha,
        beta2: first.beta2,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> SaliencyMap {
        SaliencyMap::new(h, w, v.to_vec()).unwrap()
    }

    fn mask(h: usize, w: usize, v: &[f64]) -> BinaryMask {
        BinaryMask::from_values(h, w, v).unwrap()
    }

    #[test]
    fn mae_small_case() {
        let s = map(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let g = mask(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(mae(&s, &g).unwrap(), 0.25);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let s = map(2, 2, &[0.0; 4]);
        let g = mask(1, 4, &[0.0; 4]);
        assert!(mae(&s, &g).is_err());
        assert!(s_measure(&s, &g, ALPHA).is_err());
        assert!(evaluate_pair(&s, &g).is_err());
    }

    #[test]
    fn all_ones_prediction_on_half_mask() {
        let s = map(2, 2, &[1.0; 4]);
        let g = mask(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let f = f_measure_suite(&s, &g, BETA2).unwrap();
        let expected = 1.3 * 0.5 / (0.3 * 0.5 + 1.0);
        for row in &f.curve {
            assert!((row.1 - 0.5).abs() < 1e-15);
            assert!((row.2 - 1.0).abs() < 1e-15);
            assert!((row.3 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_bins_match_comparison() {
        for b in 0..=255u8 {
            let v = b as f64 / 255.0;
            let k = threshold_bin(v);
            assert!(threshold(k) <= v);
            assert!(k == 255 || threshold(k + 1) > v);
        }
    }

    #[test]
    fn out_of_range_maps_are_stretched() {
        let s = SaliencyMap::normalized(1, 3, vec![0.0, 127.5, 255.0]).unwrap();
        assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((s.data()[1] - 0.5).abs() < 1e-9);
        let kept = SaliencyMap::normalized(1, 2, vec![0.2, 0.4]).unwrap();
        assert_eq!(kept.data(), &[0.2, 0.4]);
    }

    #[test]
    fn non_binary_mask_rejected() {
        assert!(BinaryMask::from_values(1, 2, &[0.0, 0.5]).is_err());
    }

    #[test]
    fn empty_aggregate_is_error() {
        assert_eq!(aggregate(&[]).unwrap_err(), TensorError::Empty("aggregate"));
    }
}
