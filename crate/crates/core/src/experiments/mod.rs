//! Scenario configs, runs, sweeps, CSV bundles and acceptance checks.

pub mod acceptance;
mod config;
mod csv;
mod run;
mod sweep;

pub use config::{ConfigError, ConfigValue, EdgeList, LabelList, ScenarioConfig, SinkKind, TopoKind, REFERENCE_TREE};
pub use csv::{bundle, sha256_hex, summary_cells, table, Bundle, SUMMARY_COLUMNS};
pub use run::{build_flows, run_scenario, RunError, RunResult, Summary};
pub use sweep::{sweep, sweep_configs, SweepError, SweepResult};
