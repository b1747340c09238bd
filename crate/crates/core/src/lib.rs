//! Kernel ridge regression imputation for a mean under item nonresponse,
//! with a linearization variance estimator whose inverse-propensity weights
//! come from a penalized maximum-entropy density-ratio fit in an RKHS.
//!
//! The numerical core is generic over the scalar type through [`Real`]
//! (`f32` or `f64`); the aliases at the crate root fix it to `f64`, which is
//! what the simulation harness and the CLI use.
//!
//! Typical use:
//!
//! ```no_run
//! use krr_impute::{ImputationConfig, LabeledSample};
//! # fn run(sample: LabeledSample<f64>) -> krr_impute::Result<()> {
//! let report = krr_impute::inference::estimate(&sample, &ImputationConfig::default())?;
//! println!("theta = {} (se {:?})", report.theta_hat, report.std_error);
//! # Ok(()) }
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod density_ratio;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod krr;
pub mod numerics;
pub mod sample;
mod scalar;
pub mod simulation;

pub use error::{Error, Result};
pub use inference::{ImputationConfig, ImputationReport};
pub use kernels::{KernelChoice, KernelSpec, SignConvention};
pub use krr::GcvVariant;
pub use sample::{impute_with, LabeledSample, RegressionFunction};
pub use scalar::Real;

pub type Sample = sample::LabeledSample<f64>;
pub type Kernel = kernels::KernelSpec<f64>;
pub type Scaler = kernels::InputScaler<f64>;
pub type KrrModel = krr::KrrModel<f64>;
pub type DensityRatioModel = density_ratio::DensityRatioModel<f64>;
pub type LinearModel = baselines::LinearModel<f64>;
pub type BSplineModel = baselines::BSplineModel<f64>;
pub type Report = inference::ImputationReport<f64>;
