//! Convex nonparanormal regression.
//!
//! Conditional densities `p(y | x)` are modelled by a monotone,
//! piecewise-linear map of the label to a standard normal whose coefficients
//! are affine in (mapped) features. The negative log-likelihood is convex in
//! the coefficients and is minimized by ADMM.
//!
//! - [`dictionary`]: knot grids and the basis `h(y)`
//! - [`model`]: parameters, transform, density, posterior mean, sampling
//! - [`solver`]: design matrices, ADMM and a Newton reference solver
//! - [`baselines`]: linear and heteroscedastic Gaussian regression
//! - [`data`]: synthetic generators, series windows, splitting
//! - [`experiments`]: repeated-trial harness and density curves

pub mod baselines;
pub mod data;
pub mod dictionary;
pub mod error;
pub mod experiments;
pub mod features;
pub mod model;
pub mod normal;
pub mod solver;

pub use baselines::{gr_fit, lr_fit, GrModel, LrModel};
pub use data::Dataset;
pub use dictionary::{Dictionary, KnotGrid};
pub use error::{Error, Result};
pub use features::FeatureMap;
pub use model::{CnrParams, CoefVector};
pub use solver::{admm_fit, assemble, AdmmConfig, FitDiagnostics};
