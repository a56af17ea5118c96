//! Configuration, orchestration and reporting behind the `topsim` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod report;

pub use config::{desk_benchmark, RunConfig};
pub use error::{CliError, CliResult};
