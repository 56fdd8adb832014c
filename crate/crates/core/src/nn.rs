//! Parameter declarations and tape-level building blocks shared by the
//! network modules: plain convolutions, conv-BN-ReLU blocks, affine layers
//! and squeeze-excitation channel gating.

use crate::error::Result;
use crate::params::{Init, ParamSpec};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{PadMode, Shape};

/// Squeeze-excitation reduction ratio.
pub const SE_RATIO: usize = 16;
/// Minimum hidden width of the squeeze-excitation bottleneck.
pub const SE_MIN_HIDDEN: usize = 4;

pub fn se_hidden(channels: usize) -> usize {
    (channels / SE_RATIO).max(SE_MIN_HIDDEN)
}

/// Collects parameter declarations under dotted names.
#[derive(Clone, Debug, Default)]
pub struct SpecList {
    specs: Vec<ParamSpec>,
}

impl SpecList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_vec(self) -> Vec<ParamSpec> {
        self.specs
    }

    pub fn extend(&mut self, other: SpecList) {
        self.specs.extend(other.specs);
    }

    fn push(&mut self, name: String, shape: Shape, init: Init) {
        self.specs.push(ParamSpec { name, shape, init });
    }

    fn bias(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.b"), Shape::new(1, c, 1, 1), Init::Zeros);
    }

    /// `k x k` convolution `ci -> co` with bias.
    pub fn conv(&mut self, name: &str, ci: usize, co: usize, k: usize) {
        self.push(format!("{name}.w"), Shape::new(co, ci, k, k), Init::KaimingUniform);
        self.bias(name, co);
    }

    /// Transposed convolution `ci -> co`, kernel stored `(ci, co, k, k)`.
    pub fn conv_transpose(&mut self, name: &str, ci: usize, co: usize, k: usize) {
        self.push(format!("{name}.w"), Shape::new(ci, co, k, k), Init::KaimingUniform);
        self.bias(name, co);
    }

    pub fn batchnorm(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.gamma"), Shape::new(1, c, 1, 1), Init::Ones);
        self.push(format!("{name}.beta"), Shape::new(1, c, 1, 1), Init::Zeros);
    }

    /// Convolution, batch norm, ReLU.
    pub fn cbr(&mut self, name: &str, ci: usize, co: usize, k: usize) {
        self.conv(&format!("{name}.conv"), ci, co, k);
        self.batchnorm(&format!("{name}.bn"), co);
    }

    pub fn linear(&mut self, name: &str, ci: usize, co: usize) {
        self.push(format!("{name}.w"), Shape::new(co, ci, 1, 1), Init::KaimingUniform);
        self.bias(name, co);
    }

    pub fn squeeze_excitation(&mut self, name: &str, c: usize) {
        let hidden = se_hidden(c);
        self.linear(&format!("{name}.reduce"), c, hidden);
        self.linear(&format!("{name}.expand"), hidden, c);
    }
}

/// Same-size zero-padded convolution.
pub fn conv(tape: &mut Tape, store: &ParamStore, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    tape.conv2d(x, w, b, stride, PadMode::Zero)
}

pub fn conv_transpose(
    tape: &mut Tape,
    store: &ParamStore,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    tape.conv_transpose2d(x, w, b, stride)
}

pub fn batchnorm(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let g = tape.param(store, &format!("{name}.gamma"))?;
    let b = tape.param(store, &format!("{name}.beta"))?;
    tape.batchnorm(x, g, b)
}

/// `relu(bn(conv(x)))`.
pub fn cbr(tape: &mut Tape, store: &ParamStore, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(tape, store, &format!("{name}.conv"), x, stride)?;
    let y = batchnorm(tape, store, &format!("{name}.bn"), y)?;
    Ok(tape.relu(y))
}

pub fn linear(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    tape.fully_connected(x, w, b)
}

/// Per-channel gate in (0, 1): pool, reduce, ReLU, expand, sigmoid.
/// Returns `(n, c, 1, 1)`.
pub fn channel_gate(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let s = tape.global_avg_pool(x)?;
    let s = linear(tape, store, &format!("{name}.reduce"), s)?;
    let s = tape.relu(s);
    let s = linear(tape, store, &format!("{name}.expand"), s)?;
    Ok(tape.sigmoid(s))
}

/// Squeeze-excitation: `x` scaled by its own channel gate.
pub fn squeeze_excitation(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let g = channel_gate(tape, store, name, x)?;
    tape.mul(x, g)
}
