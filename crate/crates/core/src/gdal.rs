//! Global distributed affinity learning.
//!
//! The deepest encoder stage is condensed into an image-level descriptor and
//! redistributed to each of the first three stages along two routes:
//!
//! * explicit: a spatially attended projection of the descriptor forms an
//!   affinity map that reweights the stage, followed by squeeze-excitation;
//! * implicit: a spatial softmax over the descriptor-modulated deep feature
//!   yields a `C_i x C_i` assignment matrix that mixes the stage's channels,
//!   plus a skip from the upsampled deep feature.
//!
//! The two routes are concatenated and fused by two conv-BN-ReLU blocks.
//! Parameters live under the `gdal.` prefix.

use crate::error::{Result, TensorError};
use crate::nn::{self, SpecList};
use crate::params::{ParamSpec, ParamStore};
use crate::tape::{Tape, Var};

const PREFIX: &str = "gdal";

/// `channels[0..3]` are the shallow stages, `channels[3]` the deepest.
pub fn param_specs(channels: [usize; 4]) -> Vec<ParamSpec> {
    let deep = channels[3];
    let mut s = SpecList::new();
    s.linear(&format!("{PREFIX}.desc.fc"), deep, deep);
    for (i, &c) in channels.iter().enumerate().take(3) {
        let stage = i + 1;
        s.conv(&format!("{PREFIX}.eal.s{stage}.proj"), deep, c, 1);
        s.conv(&format!("{PREFIX}.eal.s{stage}.st"), 1, 1, 7);
        s.squeeze_excitation(&format!("{PREFIX}.eal.s{stage}.se"), c);
        s.conv(&format!("{PREFIX}.ial.s{stage}.proj"), deep, c, 1);
        s.cbr(&format!("{PREFIX}.ial.s{stage}.skip"), deep, c, 1);
        s.cbr(&format!("{PREFIX}.fuse.s{stage}.mix"), 2 * c, c, 3);
        s.cbr(&format!("{PREFIX}.fuse.s{stage}.out"), c, c, 1);
    }
    s.into_vec()
}

/// Image-level descriptor `fc(gap(f4))`, shape `(n, C4, 1, 1)`.
pub fn image_descriptor(tape: &mut Tape, store: &ParamStore, f4: Var) -> Result<Var> {
    let pooled = tape.global_avg_pool(f4)?;
    nn::linear(tape, store, &format!("{PREFIX}.desc.fc"), pooled)
}

/// Explicit affinity feature for `stage`; same shape as `f`.
///
/// The descriptor is projected to the stage's channels and broadcast over
/// its grid; spatial attention `u * sigmoid(conv7x7(max_c(u)))` is applied,
/// the affinity map is `sigmoid(f * attended)`, and the result is
/// squeeze-excited `affinity * f`.
pub fn explicit_affinity(
    tape: &mut Tape,
    store: &ParamStore,
    stage: usize,
    f: Var,
    desc: Var,
) -> Result<Var> {
    let fs = tape.shape(f);
    let p = nn::conv(tape, store, &format!("{PREFIX}.eal.s{stage}.proj"), desc, 1)?;
    if tape.shape(p).c != fs.c {
        return Err(TensorError::shape(
            "explicit_affinity",
            format!("projected descriptor {} vs stage {}", tape.shape(p), fs),
        ));
    }
    let grid = tape.upsample(p, fs.h, fs.w)?;
    let m = tape.channel_max(grid)?;
    let a = nn::conv(tape, store, &format!("{PREFIX}.eal.s{stage}.st"), m, 1)?;
    let a = tape.sigmoid(a);
    let attended = tape.mul(grid, a)?;
    let prod = tape.mul(f, attended)?;
    let affinity = tape.sigmoid(prod);
    let weighted = tape.mul(affinity, f)?;
    nn::squeeze_excitation(tape, store, &format!("{PREFIX}.eal.s{stage}.se"), weighted)
}

/// Stage-channel image-level feature at the deep extent:
/// `proj(f4 * desc)`, shape `(n, C_i, H4, W4)`.
pub fn level_feature(
    tape: &mut Tape,
    store: &ParamStore,
    stage: usize,
    f4: Var,
    desc: Var,
) -> Result<Var> {
    let modulated = tape.mul(f4, desc)?;
    nn::conv(tape, store, &format!("{PREFIX}.ial.s{stage}.proj"), modulated, 1)
}

/// Softmax of each channel's spatial vector; returns the matrix view
/// `(n, 1, C_i, H4*W4)` whose rows are probability vectors.
pub fn implicit_attention(tape: &mut Tape, level: Var) -> Result<Var> {
    let flat = tape.flatten_spatial(level)?;
    tape.softmax_lastdim(flat)
}

/// `level_flat x attention^T`, shape `(n, 1, C_i, C_i)`.
///
/// Column `b` of the result is the attention-weighted average of the
/// spatial columns of `level_flat`, weights from row `b` of `attention`.
pub fn semantic_assignment(tape: &mut Tape, attention: Var, level_flat: Var) -> Result<Var> {
    let (a, l) = (tape.shape(attention), tape.shape(level_flat));
    if a != l {
        return Err(TensorError::shape(
            "semantic_assignment",
            format!("attention {a} vs level feature {l}"),
        ));
    }
    let t = tape.transpose(attention);
    tape.bmm(level_flat, t)
}

/// Implicit affinity feature: channel mixing of `f` by `assignment`, plus
/// `CBR1x1(upsample(f4))`. Same shape as `f`.
pub fn implicit_affinity(
    tape: &mut Tape,
    store: &ParamStore,
    stage: usize,
    assignment: Var,
    f: Var,
    f4: Var,
) -> Result<Var> {
    let fs = tape.shape(f);
    let mixed = mix_channels(tape, assignment, f)?;
    let up = tape.upsample(f4, fs.h, fs.w)?;
    let skip = nn::cbr(tape, store, &format!("{PREFIX}.ial.s{stage}.skip"), up, 1)?;
    tape.add(mixed, skip)
}

/// Reshaped `assignment x flatten(f)`.
pub fn mix_channels(tape: &mut Tape, assignment: Var, f: Var) -> Result<Var> {
    let fs = tape.shape(f);
    let flat = tape.flatten_spatial(f)?;
    let mixed = tape.bmm(assignment, flat)?;
    tape.unflatten_spatial(mixed, fs.h, fs.w)
}

/// `CBR1x1(CBR3x3(concat(implicit, explicit)))`.
pub fn gdal_fuse(
    tape: &mut Tape,
    store: &ParamStore,
    stage: usize,
    implicit: Var,
    explicit: Var,
) -> Result<Var> {
    if tape.shape(implicit) != tape.shape(explicit) {
        return Err(TensorError::shape(
            "gdal_fuse",
            format!("{} vs {}", tape.shape(implicit), tape.shape(explicit)),
        ));
    }
    let cat = tape.concat(&[implicit, explicit])?;
    let y = nn::cbr(tape, store, &format!("{PREFIX}.fuse.s{stage}.mix"), cat, 1)?;
    nn::cbr(tape, store, &format!("{PREFIX}.fuse.s{stage}.out"), y, 1)
}

/// Affinity-enhanced features `G_1..G_3`, each shaped like its input stage.
pub fn gdal_forward(tape: &mut Tape, store: &ParamStore, features: [Var; 4]) -> Result<[Var; 3]> {
    let f4 = features[3];
    let s4 = tape.shape(f4);
    for &f in &features[..3] {
        let s = tape.shape(f);
        if s.n != s4.n || s.h < s4.h || s.w < s4.w {
            return Err(TensorError::shape(
                "gdal_forward",
                format!("stage {s} is incompatible with deep stage {s4}"),
            ));
        }
    }
    let desc = image_descriptor(tape, store, f4)?;
    let mut out = [f4; 3];
    for (i, g) in out.iter_mut().enumerate() {
        let stage = i + 1;
        let f = features[i];
        let exp = explicit_affinity(tape, store, stage, f, desc)?;
        let level = level_feature(tape, store, stage, f4, desc)?;
        let att = implicit_attention(tape, level)?;
        let level_flat = tape.flatten_spatial(level)?;
        let assignment = semantic_assignment(tape, att, level_flat)?;
        let imp = implicit_affinity(tape, store, stage, assignment, f, f4)?;
        *g = gdal_fuse(tape, store, stage, imp, exp)?;
    }
    Ok(out)
}
