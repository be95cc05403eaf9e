//! Experiment harness: configuration, validation, orchestration and report output.
//!
//! A run goes through [`validate_config`], which reports every violation at once,
//! then [`run_experiment`], which writes the CSV or JSON artifact and a report with
//! provenance, and optionally [`render_report`] for SVG plots.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{validate_config, Experiment, ExperimentConfig, ExperimentKind, RawConfig};
pub use error::{HarnessError, EXIT_FALSIFIED, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};
pub use report::{render_report, Report, Series};
pub use run::run_experiment;
