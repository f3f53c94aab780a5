//! Batch driver: configuration, report bundles and the acceptance suite.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod context;
pub mod output;
pub mod rates;
pub mod sections;
pub mod svg;

pub use commands::Command;
pub use config::{ConfigError, RunConfig};
pub use context::{CliError, Run};
pub use output::ReportBundle;
