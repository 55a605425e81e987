//! Experiment runner behind the `pathctrl` binary: JSON configs, a registry
//! of experiments over `pathctrl-core`, and CSV/JSON reports with a manifest.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::{ExperimentConfig, Format, Overrides};
pub use error::{CliError, Result};
pub use experiments::{Context, Experiment, Registry, RunReport, THREADS_ENV};
pub use report::{Check, Manifest, Outcome, Table};
