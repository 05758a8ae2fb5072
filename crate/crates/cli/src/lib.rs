//! The `wdunet` command line: dataset generation, experiment runs,
//! checkpoint evaluation and comparison reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

pub use commands::{execute, Cli};
pub use config::{load_config, parse_config};
pub use error::CliError;
pub use manifest::RunManifest;
