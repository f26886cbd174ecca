//! Copula of a mixture of Gaussians variational approximation (CMGVA).
//!
//! The approximation transforms each parameter with a Yeo-Johnson map and
//! models the transformed vector as a mixture of factor-covariance Gaussians.
//! Components are added one at a time ("boosting"), with the earlier
//! components frozen, using score-function ELBO gradients with control
//! variates, closed-form natural-gradient preconditioning and ADAM.
//!
//! All numerical code is generic over a [`Real`] scalar (`f32` or `f64`).
//! The `*64` aliases at the crate root name the usual double-precision
//! instantiations.

pub mod booster;
pub mod error;
pub mod estimator;
pub mod factor_gauss;
pub mod linalg;
pub mod mixture;
pub mod natgrad;
pub mod real;
pub mod rng;
pub mod targets;
pub mod transform;

pub use error::{CmgvaError, Result};
pub use real::Real;

/// Double-precision factor-Gaussian component.
pub type Component64 = factor_gauss::Component<f64>;
/// Double-precision prepared (factorized) component.
pub type FactorGaussian64 = factor_gauss::FactorGaussian<f64>;
/// Double-precision variational state.
pub type CmgvaState64 = mixture::CmgvaState<f64>;
/// Double-precision Yeo-Johnson parameter vector.
pub type YjVector64 = transform::YjVector<f64>;
/// Double-precision boosting configuration.
pub type BoostConfig64 = booster::BoostConfig<f64>;
/// Double-precision ADAM state.
pub type AdamState64 = natgrad::AdamState<f64>;

/// Single-precision variational state.
pub type CmgvaState32 = mixture::CmgvaState<f32>;
/// Single-precision factor-Gaussian component.
pub type Component32 = factor_gauss::Component<f32>;
