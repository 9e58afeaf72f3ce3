//! Command-line plumbing around `mmd_sense`: configuration, the three
//! subcommands and the synthetic corpus generator.

pub mod commands;
pub mod error;
pub mod run_config;
pub mod synth;

pub use error::{CliError, CliResult};
