//! Library half of the `gma-bench` binary, so tests can drive commands
//! in-process.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use commands::{run, Cli};
pub use config::{Manifest, RunConfig};
pub use error::{CliError, CliResult};
