//! File formats and commands around `sgac_core`: model checkpoints, PNG
//! images, run configuration, sweep reports and the `sgac` command line.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod image_io;
pub mod report;

pub use error::{Error, Result};
