//! Configuration, checkpointing and the subcommands behind the `mdcoop` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

pub use error::{CliError, CliResult};
