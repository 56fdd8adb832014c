//! Edge feature adaptive balancing.
//!
//! Two parts:
//!
//! * the edge clue detector turns the two shallowest encoder stages into a
//!   single-channel edge attention map `e_att` at stage-1 resolution;
//! * the balance adjuster uses `e_att` to build per-stage spatial attention
//!   and recalibrates each of the first three stages with a channel gate.
//!
//! Parameters live under the `efaba.` prefix.

use crate::error::{Result, TensorError};
use crate::nn::{self, SpecList};
use crate::params::{ParamSpec, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Shape;

const PREFIX: &str = "efaba";

/// The first three encoder stages' channel counts.
pub type StageChannels = [usize; 3];

pub fn param_specs(channels: StageChannels) -> Vec<ParamSpec> {
    let mut s = SpecList::new();
    for (i, &c) in channels.iter().enumerate().take(2) {
        let stage = i + 1;
        s.conv(&format!("{PREFIX}.ecd.s{stage}.refine"), c, c, 3);
        s.cbr(&format!("{PREFIX}.ecd.s{stage}.fuse"), c, 1, 1);
    }
    s.cbr(&format!("{PREFIX}.ecd.att.branch1"), 1, 1, 1);
    s.cbr(&format!("{PREFIX}.ecd.att.branch2"), 1, 1, 1);
    s.conv(&format!("{PREFIX}.ecd.att.out"), 2, 1, 1);
    for (i, &c) in channels.iter().enumerate() {
        let stage = i + 1;
        s.conv(&format!("{PREFIX}.faba.s{stage}.sat"), 1, 1, 7);
        s.squeeze_excitation(&format!("{PREFIX}.faba.s{stage}.ct"), c);
    }
    s.into_vec()
}

/// `sigmoid(sobel(f)) * f`.
pub fn edge_gate(tape: &mut Tape, f: Var) -> Result<Var> {
    let g = tape.sobel_magnitude(f);
    let g = tape.sigmoid(g);
    tape.mul(g, f)
}

/// Single-channel fused edge clue `CBR1x1(conv3x3(e) + f)` for `stage` 1 or 2.
pub fn edge_fuse(tape: &mut Tape, store: &ParamStore, stage: usize, e: Var, f: Var) -> Result<Var> {
    if tape.shape(e) != tape.shape(f) {
        return Err(TensorError::shape(
            "edge_fuse",
            format!("edge {} vs feature {}", tape.shape(e), tape.shape(f)),
        ));
    }
    let r = nn::conv(tape, store, &format!("{PREFIX}.ecd.s{stage}.refine"), e, 1)?;
    let sum = tape.add(r, f)?;
    nn::cbr(tape, store, &format!("{PREFIX}.ecd.s{stage}.fuse"), sum, 1)
}

/// Edge attention at stage-1 resolution from the two fused clues.
pub fn edge_attention(tape: &mut Tape, store: &ParamStore, e1f: Var, e2f: Var) -> Result<Var> {
    let (s1, s2) = (tape.shape(e1f), tape.shape(e2f));
    if s1.h != 2 * s2.h || s1.w != 2 * s2.w || s1.c != 1 || s2.c != 1 {
        return Err(TensorError::shape(
            "edge_attention",
            format!("stage-1 clue {s1} must be twice the single-channel stage-2 clue {s2}"),
        ));
    }
    let up = tape.upsample(e2f, s1.h, s1.w)?;
    let b1 = nn::cbr(tape, store, &format!("{PREFIX}.ecd.att.branch1"), e1f, 1)?;
    let b2 = nn::cbr(tape, store, &format!("{PREFIX}.ecd.att.branch2"), up, 1)?;
    let cat = tape.concat(&[b1, b2])?;
    let y = nn::conv(tape, store, &format!("{PREFIX}.ecd.att.out"), cat, 1)?;
    Ok(tape.sigmoid(y))
}

/// `sigmoid(conv7x7(channel_max(resize(e_att) * f)))` at the extent of `f`.
pub fn spatial_attention(
    tape: &mut Tape,
    store: &ParamStore,
    stage: usize,
    e_att: Var,
    f: Var,
) -> Result<Var> {
    let fs = tape.shape(f);
    let e = tape.resize(e_att, fs.h, fs.w)?;
    let weighted = tape.mul(f, e)?;
    let m = tape.channel_max(weighted)?;
    let y = nn::conv(tape, store, &format!("{PREFIX}.faba.s{stage}.sat"), m, 1)?;
    Ok(tape.sigmoid(y))
}

/// Channel calibration used by [`faba_balance`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Calibration {
    /// The learned squeeze-excitation gate.
    Learned,
    /// Gate fixed at one; isolates the attention arithmetic in tests.
    Bypass,
}

/// `f * CT((sat + 1) * f)`, where `CT(x) = x * gate(x)`.
pub fn faba_balance(
    tape: &mut Tape,
    store: &ParamStore,
    stage: usize,
    sat: Var,
    f: Var,
    calibration: Calibration,
) -> Result<Var> {
    let a = tape.add_scalar(sat, 1.0);
    let aligned = tape.mul(f, a)?;
    let calibrated = match calibration {
        Calibration::Learned => {
            nn::squeeze_excitation(tape, store, &format!("{PREFIX}.faba.s{stage}.ct"), aligned)?
        }
        Calibration::Bypass => aligned,
    };
    tape.mul(f, calibrated)
}

/// Balanced stage features and the edge attention map.
#[derive(Clone, Copy, Debug)]
pub struct EfabaOutputs {
    pub balanced: [Var; 3],
    /// Stage-1 resolution, values in (0, 1).
    pub edge_attention: Var,
}

pub fn efaba_forward(
    tape: &mut Tape,
    store: &ParamStore,
    features: [Var; 3],
) -> Result<EfabaOutputs> {
    let shapes: Vec<Shape> = features.iter().map(|&f| tape.shape(f)).collect();
    for pair in shapes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.n != b.n || a.h != 2 * b.h || a.w != 2 * b.w {
            return Err(TensorError::shape(
                "efaba_forward",
                format!("stage extents {a} -> {b} do not halve"),
            ));
        }
    }
    let mut clues = [features[0]; 2];
    for (i, clue) in clues.iter_mut().enumerate() {
        let e = edge_gate(tape, features[i])?;
        *clue = edge_fuse(tape, store, i + 1, e, features[i])?;
    }
    let e_att = edge_attention(tape, store, clues[0], clues[1])?;
    let mut balanced = features;
    for (i, out) in balanced.iter_mut().enumerate() {
        let sat = spatial_attention(tape, store, i + 1, e_att, features[i])?;
        *out = faba_balance(tape, store, i + 1, sat, features[i], Calibration::Learned)?;
    }
    Ok(EfabaOutputs {
        balanced,
        edge_attention: e_att,
    })
}
