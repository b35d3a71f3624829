//! Kernel score calibration for differentiable stochastic simulation models.
//!
//! The crate learns the input parameters `θ` of a simulator from output-level
//! data by minimising the kernel simulated score (a U-statistic estimate of
//! the squared MMD between model output and data) with projected stochastic
//! gradient descent, then builds a sandwich-covariance confidence ellipsoid
//! around the estimate that stays valid when the model is inexact.
//!
//! Everything here is pure computation on `alloc` collections, so the crate
//! builds without `std`. File formats, the parallel experiment harness and
//! the command line live in the `kscal` companion crate.
//!
//! Module map:
//! * [`linalg`], [`special`]: parameter boxes, small symmetric matrices and
//!   the chi-square quantile.
//! * [`dual`]: forward-mode dual numbers carrying `∂/∂θ`.
//! * [`kernel`]: Gaussian, Laplacian and Riesz kernels, median heuristic.
//! * [`sim`]: G/G/1 queue pushforward via the Lindley recursion.
//! * [`score`], [`sgd`]: the kernel simulated score and projected Adam.
//! * [`inference`]: plug-in Hessian / covariance and confidence sets.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dual;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod seed;
pub mod sgd;
pub mod score;
pub mod sim;
pub mod special;

mod fmath;

pub use dual::{Dual, MAX_PARAMS};
pub use error::{Error, Result};
pub use inference::{ConfidenceSet, SandwichEstimate, SetGeometry};
pub use kernel::{Bandwidth, KernelSpec, ResolvedKernel};
pub use linalg::{BoxDomain, Matrix, ParamVector, SymMatrix};
pub use score::{ScoreContext, SimSample};
pub use sgd::{CalibrationResult, OptimizerKind, OptimumConfig, SgdConfig};
pub use sim::{Contamination, Dist, GG1Model, LatentBlock, RateSource, Stage, TargetSystem};
