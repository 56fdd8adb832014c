//! Tensor engine, saliency network and evaluation metrics.
//!
//! * [`tensor`], [`ops`], [`tape`]: rank-4 `f64` tensors, their kernels and
//!   reverse-mode differentiation.
//! * [`efaba`], [`gdal`], [`network`]: the edge-guided and affinity modules
//!   and the encoder-decoder that hosts them.
//! * [`train`]: Adam and the toy training loop.
//! * [`metrics`]: MAE, S-, F- and E-measure.
//! * [`gradcheck`]: finite-difference verification of every operation.

pub mod efaba;
pub mod error;
pub mod gdal;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Result, TensorError};
pub use params::{ParamSpec, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Matrix3, PadMode, Shape, Tensor};
