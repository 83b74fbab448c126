//! Exact densities and samplers for the Gaussian, Gaussian-mixture and
//! skew-normal families.

mod gaussian;
mod mixture;
mod skew_normal;
mod special;

use rand::RngCore;

use crate::error::Result;

pub use gaussian::{DiagonalGaussian, FullGaussian, Gaussian1D};
pub use mixture::{sample_categorical, GaussianMixture};
pub use skew_normal::SkewNormal1D;
pub use special::{erf, erfc, log_std_normal_cdf, std_normal_cdf, std_normal_log_pdf, LN_SQRT_2PI};

/// A normalized density on `R^dim` that can be evaluated and sampled.
pub trait Density {
    fn dim(&self) -> usize;

    /// Natural-log density at `z`.
    fn log_pdf(&self, z: &[f64]) -> Result<f64>;

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

pub(crate) fn check_dim(expected: usize, z: &[f64]) -> Result<()> {
    if z.len() != expected {
        return Err(crate::error::CdeError::Dimension {
            expected,
            got: z.len(),
        });
    }
    Ok(())
}
