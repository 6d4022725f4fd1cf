//! Experiment plumbing: configuration, runs, rate fits and the acceptance
//! suite.

pub mod acceptance;
pub mod config;
pub mod experiment;
pub mod oracles;
pub mod rate;

pub use config::{ExperimentConfig, OptimizerKind, Overrides};
pub use experiment::{run_experiment, Manifest};
pub use rate::{fit_rate, SlopeFit};
