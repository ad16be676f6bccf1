//! Monte-Carlo harness: scenario definitions, the trial runner and result tables.

mod config;
mod output;
mod runner;

pub use config::{preset, Design, ScenarioConfig, PRESETS};
pub use output::{write_csv, write_json};
pub use runner::{run_scenario, ExperimentResult, ResultRow};
