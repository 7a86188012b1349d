//! Partition-based functional ridge regression for scalar-on-function
//! linear models.
//!
//! The crate builds penalized B-spline representations of functional
//! covariates, fits three ridge-type estimators (FRE, FRFM, FRSM), tunes
//! them by generalized cross-validation, recovers a relevant/nuisance
//! predictor split by adaptive-ridge reweighting, and provides plug-in
//! inference for linear functionals plus a seeded Monte Carlo study driver.

pub mod basis;
pub mod cli;
pub mod design;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod partition;
pub mod pipeline;
pub mod quadrature;
pub mod simulation;
pub mod tuning;

pub use error::{Error, Result};
