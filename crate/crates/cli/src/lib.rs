//! Command-line front end for `sodkit-core`: image and weights I/O, dataset
//! pairing, report writing and the `lba-sodkit` subcommands.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod forward;
pub mod gradcheck;
pub mod image_io;
pub mod report;
pub mod train_toy;
pub mod weights;

pub use cli::{run, Cli};
pub use error::{exit, CliError};
