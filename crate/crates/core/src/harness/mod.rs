//! Scenario files, the discrete-event engine, metrics output and sweeps.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod sweep;

pub use config::{ConfigError, ScenarioConfig};
pub use engine::{build_consensus, run_scenario, RunOutput, ScenarioError};
pub use metrics::{ClientMetrics, Outcome, RunMetrics, Summary};
pub use sweep::{rows_to_csv, run_sweep, SweepGrid, SweepRow, SWEEP_CSV_HEADER};
