//! File formats, run configuration and the command-line driver for
//! [`dmf_core`].

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod model_file;
pub mod ratings;
pub mod report;

pub use error::{Error, Result};
