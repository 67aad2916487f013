//! Experiment orchestration: configs, the training loop, cross-seed
//! aggregation, plots and sweeps.

pub mod aggregate;
pub mod config;
pub mod plot;
pub mod runner;
pub mod sweep;

pub use aggregate::{aggregate, final_performance, iqm, learning_speed, AggregateCurve, Normalization, SeedCurves};
pub use config::{ExperimentConfig, ModelKind};
pub use runner::{run_experiment, Agent, MetricRecord, RunOutcome, RunState, RunStatus};
pub use sweep::{run_sweep, SweepGrid};
