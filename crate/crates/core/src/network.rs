//! Full encoder-decoder assembly with deep supervision.
//!
//! A convolutional stub stands in for the transformer backbone and produces
//! four stages at strides 4, 8, 16 and 32. The first three stages pass
//! through the edge (EFABA) and affinity (GDAL) modules, are fused, and feed
//! an additive decoder with stride-2 transposed convolutions. Every decoder
//! level emits a side prediction; `sides[0]` is the final map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::efaba;
use crate::error::{Result, TensorError};
use crate::gdal;
use crate::nn::{self, SpecList};
use crate::params::{ParamSpec, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Channel counts of the four backbone stages at full width.
pub const STAGE_CHANNELS: [usize; 4] = [64, 128, 320, 512];
/// Default input resolution.
pub const DEFAULT_INPUT_SIZE: usize = 352;
/// Input extents must be divisible by the deepest stride.
pub const INPUT_MULTIPLE: usize = 32;

/// Geometry of one encoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    /// 1-based stage index.
    pub index: usize,
    pub channels: usize,
    /// Downsampling factor relative to the input, `2^(index + 1)`.
    pub stride: usize,
    /// Upsampling factor from the deepest stage to this one, `2^(4 - index)`.
    pub upscale: usize,
}

impl StageSpec {
    pub fn new(index: usize, channels: usize) -> Self {
        StageSpec {
            index,
            channels,
            stride: 1 << (index + 1),
            upscale: 1 << (4 - index),
        }
    }

    /// Spatial extent of this stage for an input extent.
    pub fn extent(&self, input: usize) -> usize {
        input / self.stride
    }
}

/// Which of the two attention modules are enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Baseline,
    Efaba,
    Gdal,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Baseline,
        Ablation::Efaba,
        Ablation::Gdal,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Efaba => "efaba",
            Ablation::Gdal => "gdal",
            Ablation::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Ablation::Baseline => (false, false),
            Ablation::Efaba => (true, false),
            Ablation::Gdal => (false, true),
            Ablation::Full => (true, true),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_size: usize,
    /// Multiplier on every stage's channel count, in (0, 1].
    pub channel_scale: f64,
    pub enable_efaba: bool,
    pub enable_gdal: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: DEFAULT_INPUT_SIZE,
            channel_scale: 1.0,
            enable_efaba: true,
            enable_gdal: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Desk-scale defaults: 64x64 input, channels {8, 16, 40, 64}.
    pub fn toy() -> Self {
        NetworkConfig {
            input_size: 64,
            channel_scale: 0.125,
            ..Self::default()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        (self.enable_efaba, self.enable_gdal) = ablation.flags();
        self
    }

    pub fn ablation(&self) -> Ablation {
        match (self.enable_efaba, self.enable_gdal) {
            (false, false) => Ablation::Baseline,
            (true, false) => Ablation::Efaba,
            (false, true) => Ablation::Gdal,
            (true, true) => Ablation::Full,
        }
    }

    /// Scaled stage channels; each must be at least 4 and divisible by 4.
    pub fn channels(&self) -> Result<[usize; 4]> {
        if !(self.channel_scale > 0.0 && self.channel_scale <= 1.0) {
            return Err(TensorError::argument(
                "network config",
                format!("channel_scale {} outside (0, 1]", self.channel_scale),
            ));
        }
        let mut out = [0; 4];
        for (o, &c) in out.iter_mut().zip(&STAGE_CHANNELS) {
            let scaled = (c as f64 * self.channel_scale).round() as usize;
            if scaled < 4 || !scaled.is_multiple_of(4) {
                return Err(TensorError::argument(
                    "network config",
                    format!("channel_scale {} gives {scaled} channels for a {c}-channel stage", self.channel_scale),
                ));
            }
            *o = scaled;
        }
        Ok(out)
    }

    pub fn stages(&self) -> Result<[StageSpec; 4]> {
        let c = self.channels()?;
        Ok(std::array::from_fn(|i| StageSpec::new(i + 1, c[i])))
    }

    /// Every learnable tensor of this configuration, in a fixed order.
    pub fn param_specs(&self) -> Result<Vec<ParamSpec>> {
        let c = self.channels()?;
        let mut s = SpecList::new();
        s.cbr("encoder.s1.a", 3, c[0], 3);
        s.cbr("encoder.s1.b", c[0], c[0], 3);
        for i in 1..4 {
            s.cbr(&format!("encoder.s{}.a", i + 1), c[i - 1], c[i], 3);
            s.cbr(&format!("encoder.s{}.b", i + 1), c[i], c[i], 3);
        }
        let mut specs = s.into_vec();
        if self.enable_efaba {
            specs.extend(efaba::param_specs([c[0], c[1], c[2]]));
        }
        if self.enable_gdal {
            specs.extend(gdal::param_specs(c));
        }
        let mut s = SpecList::new();
        for (i, &ci) in c.iter().enumerate().take(3) {
            s.cbr(&format!("fuse.s{}", i + 1), ci, ci, 3);
        }
        s.cbr("decoder.d4", c[3], c[3], 3);
        for i in (0..3).rev() {
            s.conv_transpose(&format!("decoder.up{}", i + 1), c[i + 1], c[i], 2);
            s.cbr(&format!("decoder.d{}", i + 1), c[i], c[i], 3);
        }
        for (i, &ci) in c.iter().enumerate() {
            s.conv(&format!("decoder.side{}", i + 1), ci, 1, 1);
        }
        specs.extend(s.into_vec());
        Ok(specs)
    }

    /// Seeded initialization of [`NetworkConfig::param_specs`].
    pub fn init_params(&self) -> Result<ParamStore> {
        let specs = self.param_specs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(ParamStore::from_specs(&specs, &mut rng))
    }
}

/// Four-stage convolutional stand-in for the backbone.
pub fn stub_encoder(tape: &mut Tape, store: &ParamStore, image: Var) -> Result<[Var; 4]> {
    let s = tape.shape(image);
    if s.c != 3 {
        return Err(TensorError::shape(
            "stub_encoder",
            format!("expected a 3-channel image, got {s}"),
        ));
    }
    if s.h == 0 || s.w == 0 || !s.h.is_multiple_of(INPUT_MULTIPLE) || !s.w.is_multiple_of(INPUT_MULTIPLE) {
        return Err(TensorError::shape(
            "stub_encoder",
            format!("input extent {}x{} is not divisible by {INPUT_MULTIPLE}", s.h, s.w),
        ));
    }
    let mut x = nn::cbr(tape, store, "encoder.s1.a", image, 2)?;
    x = nn::cbr(tape, store, "encoder.s1.b", x, 2)?;
    let mut out = [x; 4];
    for (i, slot) in out.iter_mut().enumerate().skip(1) {
        x = nn::cbr(tape, store, &format!("encoder.s{}.a", i + 1), x, 2)?;
        x = nn::cbr(tape, store, &format!("encoder.s{}.b", i + 1), x, 1)?;
        *slot = x;
    }
    Ok(out)
}

/// `CBR3x3(a + b)` for decoder stage `stage`.
pub fn fuse_fg(tape: &mut Tape, store: &ParamStore, stage: usize, a: Var, b: Var) -> Result<Var> {
    let sum = tape.add(a, b)?;
    nn::cbr(tape, store, &format!("fuse.s{stage}"), sum, 1)
}

/// Additive decoder; returns side predictions `P_1..P_4` at `out_h x out_w`.
pub fn decoder(
    tape: &mut Tape,
    store: &ParamStore,
    fused: [Var; 3],
    f4: Var,
    out_h: usize,
    out_w: usize,
) -> Result<[Var; 4]> {
    let mut levels = [f4; 4];
    levels[3] = nn::cbr(tape, store, "decoder.d4", f4, 1)?;
    for i in (0..3).rev() {
        let up = nn::conv_transpose(tape, store, &format!("decoder.up{}", i + 1), levels[i + 1], 2)?;
        if tape.shape(up) != tape.shape(fused[i]) {
            return Err(TensorError::shape(
                "decoder",
                format!(
                    "upsampled level {} does not match stage {} feature {}",
                    tape.shape(up),
                    i + 1,
                    tape.shape(fused[i])
                ),
            ));
        }
        let sum = tape.add(fused[i], up)?;
        levels[i] = nn::cbr(tape, store, &format!("decoder.d{}", i + 1), sum, 1)?;
    }
    let mut sides = levels;
    for (i, side) in sides.iter_mut().enumerate() {
        let logit = nn::conv(tape, store, &format!("decoder.side{}", i + 1), levels[i], 1)?;
        let up = tape.upsample(logit, out_h, out_w)?;
        *side = tape.sigmoid(up);
    }
    Ok(sides)
}

/// Handles to everything a forward pass produces.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    /// Side predictions at input resolution; `sides[0]` is the final map.
    pub sides: [Var; 4],
    /// Edge attention at input resolution, when the edge module is enabled.
    pub edge: Option<Var>,
    pub encoder: [Var; 4],
    pub balanced: Option<[Var; 3]>,
    pub affinity: Option<[Var; 3]>,
}

impl ForwardOutputs {
    pub fn prediction(&self) -> Var {
        self.sides[0]
    }
}

/// Runs the network on `image` (`(n, 3, H, W)`, values in [0, 1]).
pub fn forward(
    tape: &mut Tape,
    config: &NetworkConfig,
    store: &ParamStore,
    image: Var,
) -> Result<ForwardOutputs> {
    let s = tape.shape(image);
    let encoder = stub_encoder(tape, store, image)?;
    let shallow = [encoder[0], encoder[1], encoder[2]];

    let (balanced, edge) = if config.enable_efaba {
        let out = efaba::efaba_forward(tape, store, shallow)?;
        let edge = tape.upsample(out.edge_attention, s.h, s.w)?;
        (Some(out.balanced), Some(edge))
    } else {
        (None, None)
    };
    let affinity = if config.enable_gdal {
        Some(gdal::gdal_forward(tape, store, encoder)?)
    } else {
        None
    };

    let mut fused = shallow;
    for (i, slot) in fused.iter_mut().enumerate() {
        let a = balanced.map_or(shallow[i], |b| b[i]);
        let b = affinity.map_or(shallow[i], |g| g[i]);
        *slot = fuse_fg(tape, store, i + 1, a, b)?;
    }
    let sides = decoder(tape, store, fused, encoder[3], s.h, s.w)?;
    Ok(ForwardOutputs {
        sides,
        edge,
        encoder,
        balanced,
        affinity,
    })
}

/// Deep-supervision objective: BCE of every side map against `gt`, plus BCE
/// of the edge map against `gt_edge` when present.
pub fn loss(tape: &mut Tape, out: &ForwardOutputs, gt: &Tensor, gt_edge: &Tensor) -> Result<Var> {
    let ps = tape.shape(out.sides[0]);
    if gt.shape() != ps || gt_edge.shape() != ps {
        return Err(TensorError::shape(
            "loss",
            format!(
                "targets {} / {} do not match predictions {ps}",
                gt.shape(),
                gt_edge.shape()
            ),
        ));
    }
    let mut total = tape.bce(out.sides[0], gt)?;
    for &side in &out.sides[1..] {
        let l = tape.bce(side, gt)?;
        total = tape.add(total, l)?;
    }
    if let Some(edge) = out.edge {
        let l = tape.bce(edge, gt_edge)?;
        total = tape.add(total, l)?;
    }
    Ok(total)
}

/// Final prediction `P_1` for a batch, without keeping the tape.
pub fn predict(config: &NetworkConfig, store: &ParamStore, image: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.leaf(image.clone());
    let out = forward(&mut tape, config, store, x)?;
    Ok(tape.value(out.prediction()).clone())
}

/// Boundary band of a binary mask: 3x3 dilation minus 3x3 erosion, with
/// out-of-image neighbours ignored.
pub fn make_gt_edge(mask: &Tensor) -> Result<Tensor> {
    if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(TensorError::argument(
            "make_gt_edge",
            format!("mask value {v} is not binary"),
        ));
    }
    let s = mask.shape();
    Ok(Tensor::from_fn(s, |n, c, y, x| {
        let (mut lo, mut hi) = (1.0f64, 0.0f64);
        for yy in y.saturating_sub(1)..=(y + 1).min(s.h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(s.w - 1) {
                let v = mask.at(n, c, yy, xx);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        hi - lo
    }))
}

/// Expected `(n, c, h, w)` of the four encoder stages for an input extent.
pub fn stage_shapes(config: &NetworkConfig, batch: usize, input: usize) -> Result<[Shape; 4]> {
    let stages = config.stages()?;
    Ok(stages.map(|st| Shape::new(batch, st.channels, st.extent(input), st.extent(input))))
}
