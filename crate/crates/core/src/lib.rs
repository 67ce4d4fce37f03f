//! Covariate-adjusted sharp regression discontinuity estimation.
//!
//! The crate is `no_std` (with `alloc`) and contains only numerical code:
//!
//! - [`data`]: the cutoff-normalized [`Dataset`] and its diagnostics.
//! - [`kernel`] and [`locfit`]: one-sided local polynomial weighted least
//!   squares, with every fit exposed as explicit [`LinearWeights`].
//! - [`estimators`]: the standard estimator and five covariate-adjusted
//!   variants, plus the partial-out linearization.
//! - [`inference`]: bias correction, nearest-neighbor / plug-in residual /
//!   cluster-robust variances and robust confidence intervals.
//! - [`bandwidth`]: MSE- and CER-optimal plug-in bandwidth selection.
//!
//! File formats, the Monte Carlo harness and the command line live in the
//! `rdcov` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bandwidth;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod locfit;
pub mod normal;
mod vce;

pub use bandwidth::{BandwidthConfig, BandwidthRule, BandwidthSelection, PilotTrace, Regularization};
pub use data::{validate, Dataset, DiagnosticsReport};
pub use error::{Error, Result};
pub use estimators::{covariate_rd_effects, estimate, EstimatorKind, Gamma, PointEstimate};
pub use inference::{
    BiasCorrectedFit, BiasEstimate, InferenceResult, PlaceboRow, VarianceEstimate, VarianceMethod,
    VarianceOptions,
};
pub use kernel::Kernel;
pub use locfit::{fit_weights, joint_fit, FitSide, JointFit, LinearWeights, LocalFitSpec};
