//! Experiment runner: configuration files, pre-flight validation and the
//! `run`, `ablate-clusters`, `privacy-sweep` and `prepare-data` commands.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_ablate_clusters, cmd_prepare_data, cmd_privacy_sweep, cmd_run, preflight, CliError, CliResult, Overrides,
    Prepared,
};
pub use config::{BetaChoice, ExperimentConfig, RunPoint, Scope};
