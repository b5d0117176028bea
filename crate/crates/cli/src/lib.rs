//! Experiment runner: reads a TOML config, runs every method on every seed
//! with a shared dataset and initialization, and writes CSV, JSON and SVG
//! results.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod output;
pub mod plots;
pub mod selftest;

pub use cli::cli_entry;
pub use config::{parse_config, ExperimentConfig, Method};
pub use experiment::{run_experiment, ResultsBundle};
pub use output::{emit_csv, emit_json};
pub use plots::emit_plots;
