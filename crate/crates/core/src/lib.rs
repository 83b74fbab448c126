//! Conditional density estimation with noise-regularized maximum likelihood.
//!
//! The crate provides three neural conditional density estimators (mixture
//! density network, kernel mixture network, normalizing-flow network), kernel
//! density baselines, simulators with exact conditional densities, and an
//! experiment harness that fits, scores and aggregates them.

pub mod data;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod nonparametric;
pub mod numcore;
pub mod rng;
pub mod simulation;
pub mod trainer;

pub use data::{Dataset, Standardizer};
pub use error::{CdeError, Result};
