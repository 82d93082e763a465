//! File formats, run configuration and subcommands of the `convsep` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
