//! Configuration, file formats and subcommands of the `pfrecon` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use config::Config;
pub use error::CliError;
