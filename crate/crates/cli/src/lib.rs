//! Configuration, scenario orchestration and report generation for the tilt solvers.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod output;
pub mod scenarios;

pub use config::{ScenarioConfig, ScenarioKind, load_config, parse_config, preset};
pub use error::CliError;
pub use scenarios::{Check, ScenarioOutcome, run_scenario, sweep};
