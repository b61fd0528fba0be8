//! Experiment harness: configs, seeded runs, learning curves and reports.

pub mod config;
pub mod curve;
mod error;
pub mod report;
pub mod run;
pub mod thresholds;

pub use config::{ExperimentConfig, PretrainSection, Variant};
pub use curve::{CurveRow, LearningCurve};
pub use error::{Error, Result};
pub use report::emit_report;
pub use run::{run_experiment, RunOutcome};
