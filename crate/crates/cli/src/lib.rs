//! Command-line pipelines around `poi_xaudit_core`: configuration, artifact
//! layout and the subcommand implementations used by the `poi-xaudit` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
