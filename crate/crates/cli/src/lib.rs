//! Experiment harness: config files, training runs and sweeps, the property
//! battery, and CSV/JSON/SVG export.

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod format;
pub mod svg;
pub mod verify;

pub use error::{CliError, CliResult};
