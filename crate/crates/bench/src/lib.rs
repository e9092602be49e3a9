//! Experiment orchestration for the semcom toolkit: configuration files,
//! the experiment registry, the results CSV and plot tables.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod results;

/// Environment variable overriding every output directory.
pub const OUTPUT_DIR_ENV: &str = "LDSC_OUTPUT_DIR";
