//! Experiment harness behind the `unlearn-forge` binary: TOML configs,
//! per-trial pipelines, versioned run directories and reports.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod store;

pub use config::ExperimentConfig;
