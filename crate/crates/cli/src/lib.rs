//! Command-line harness for `sac-core`: run configuration, dataset and
//! checkpoint files, metrics streams and the `sac` subcommands.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod run;

pub use config::RunConfig;
pub use error::CliError;
