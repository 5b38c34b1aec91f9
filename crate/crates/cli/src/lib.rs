//! Configuration, orchestration and reporting for the `aang` command.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod orchestrate;

pub use error::CliError;
