//! Config-driven experiments and their report bundles.

mod config;
mod runner;

pub use config::{
    set_path, ConfigError, EstimatorConfig, ExperimentConfig, ExperimentKind, FieldsConfig,
    FlatnessConfig, GridConfig, Instance, SweepConfig, SCHEMA,
};
pub use runner::{read_summary, run_experiment, Invariant, Outcome, RunError, RunSummary};
