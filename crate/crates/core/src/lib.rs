//! Heart-rate-variability reconstruction from multi-ROI BOLD time series.
//!
//! The pipeline: triage PPG recordings ([`ppg`]), turn the usable ones into
//! frame-aligned HRV targets, slice ROI matrices into sliding windows
//! ([`dataset`]), fit a 1D-convolution + GRU regressor ([`nn`]) per
//! cross-validation fold and score held-out scans ([`metrics`]). The
//! [`simulator`] produces synthetic scans with known ground truth.

// `!(x > 0.0)` guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod ppg;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
