//! Experiment harness around `bnnlab-core`: config files, dataset IO, runs
//! and plot-ready CSV outputs.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod output;

pub use config::{ExperimentConfig, Method};
pub use error::{LabError, Result};
pub use experiment::{compare, run_experiment, Fitted, RunOutcome};
