//! Experiment harness for the reliability probes: configuration, the
//! end-to-end pipeline, reports and the `probe` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use report::ReliabilityReport;
