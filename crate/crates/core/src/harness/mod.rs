//! Closed-loop scenario runner, parameter sweeps and CSV output.

pub mod config;
pub mod emit;
pub mod metrics;
pub mod scenario;
pub mod sweep;

pub use config::{ConfigFile, ProfileName, RmseWindow, ScenarioConfig};
pub use metrics::{metrics, MetricsRow};
pub use scenario::{run_scenario, Sample, TimeSeries};
pub use sweep::{run_sweep, CellFailure, SweepResult, Variant};
