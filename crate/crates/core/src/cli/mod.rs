//! Config-driven experiment runner behind the `fpflow` binary.

pub mod config;
pub mod run;

pub use config::{Experiment, ExperimentConfig, ExperimentParams};
pub use run::{reference_partition, run, RunReport};
