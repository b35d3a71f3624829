//! Experiment harness, file formats and command line for `kscal-core`.
//!
//! The numerical work lives in the core crate; this crate adds JSON configs,
//! CSV/JSON artifacts, a rayon-parallel Monte Carlo harness and the `kscal`
//! binary.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod report;

pub use config::{builtin, ExperimentConfig, ExperimentPoint, RunConfigFile, ThetaStar, BUILTIN_IDS};
pub use error::{Error, Result};
pub use experiments::{run_experiment, ExperimentResult, RunMetrics, RunOptions};
