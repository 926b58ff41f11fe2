//! Batch pipeline behind the `hrv-bold` binary: simulate scans, triage PPG,
//! build windows, cross-validate, compare ROI configurations and report.

pub mod compare;
pub mod config;
pub mod data;
pub mod error;
pub mod manifest;
pub mod qc;
pub mod report;
pub mod simulate;
pub mod svg;
pub mod train_cv;
pub mod windows;

pub use config::{ExperimentConfig, RunRecord};
pub use error::{CliError, Result};
