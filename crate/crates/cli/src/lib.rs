//! Pipeline runner around `mfrl-core`: experiment configuration, binary
//! checkpoint and feature-file formats, report emission, and the
//! train / evaluate / spectrum / sweep / compare-averaging commands.
//!
//! Everything the `mfrl` binary does is reachable through this library so
//! tests can drive full experiments in process. Commands are deterministic
//! in (config, seed): reruns overwrite their outputs with identical bytes.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod featfile;
pub mod pipeline;
pub mod reports;

pub use error::{CliError, Result};
