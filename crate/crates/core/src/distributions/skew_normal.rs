use std::f64::consts::{LN_2, PI};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::special::{log_std_normal_cdf, std_normal_log_pdf};
use super::{check_dim, Density};
use crate::error::{CdeError, Result};
use crate::rng::std_normal;

/// Skew-normal with location ξ, scale ω and shape α:
/// `p(y) = (2/ω) φ((y-ξ)/ω) Φ(α (y-ξ)/ω)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewNormal1D {
    location: f64,
    scale: f64,
    shape: f64,
}

impl SkewNormal1D {
    pub fn new(location: f64, scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !location.is_finite() || !shape.is_finite() {
            return Err(CdeError::invalid(format!(
                "skew-normal needs finite parameters and scale > 0, got ({location}, {scale}, {shape})"
            )));
        }
        Ok(SkewNormal1D {
            location,
            scale,
            shape,
        })
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// δ = α / √(1 + α²).
    pub fn delta(&self) -> f64 {
        self.shape / (1.0 + self.shape * self.shape).sqrt()
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        let z = (y - self.location) / self.scale;
        LN_2 - self.scale.ln() + std_normal_log_pdf(z) + log_std_normal_cdf(self.shape * z)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }

    pub fn mean(&self) -> f64 {
        self.location + self.scale * self.delta() * (2.0 / PI).sqrt()
    }

    pub fn variance(&self) -> f64 {
        let d = self.delta();
        self.scale * self.scale * (1.0 - 2.0 * d * d / PI)
    }

    pub fn skewness(&self) -> f64 {
        let m = self.delta() * (2.0 / PI).sqrt();
        (4.0 - PI) / 2.0 * m.powi(3) / (1.0 - m * m).powf(1.5)
    }

    /// `ξ + ω(δ|U0| + √(1-δ²) U1)` with independent standard normals.
    pub fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        let d = self.delta();
        let u0 = std_normal(rng).abs();
        let u1 = std_normal(rng);
        self.location + self.scale * (d * u0 + (1.0 - d * d).sqrt() * u1)
    }
}

impl Density for SkewNormal1D {
    fn dim(&self) -> usize {
        1
    }

    fn log_pdf(&self, z: &[f64]) -> Result<f64> {
        check_dim(1, z)?;
        Ok(self.ln_pdf(z[0]))
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![self.draw(rng)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Gaussian1D;
    use crate::rng::seeded;

    #[test]
    fn zero_shape_is_gaussian() {
        let s = SkewNormal1D::new(0.7, 1.9, 0.0).unwrap();
        let g = Gaussian1D::new(0.7, 1.9).unwrap();
        for y in [-5.0, -1.0, 0.7, 3.3] {
            assert!((s.ln_pdf(y) - g.ln_pdf(y)).abs() < 1e-14);
        }
    }

    #[test]
    fn at_location_the_factor_two_cancels() {
        let s = SkewNormal1D::new(0.0, 1.0, -4.0).unwrap();
        assert!((s.ln_pdf(0.0) + 0.918_938_533_204_672_8).abs() < 1e-14);
    }

    #[test]
    fn integrates_to_one_and_tails_stay_finite() {
        for alpha in [-4.0, -1.0, 0.0, 2.0, 10.0] {
            let s = SkewNormal1D::new(0.5, 1.3, alpha).unwrap();
            let (lo, hi, n) = (0.5 - 13.0, 0.5 + 13.0, 10_000);
            let h = (hi - lo) / (n - 1) as f64;
            let total: f64 = (0..n)
                .map(|i| {
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    w * s.pdf(lo + i as f64 * h)
                })
                .sum::<f64>()
                * h;
            assert!((total - 1.0).abs() < 1e-4, "alpha {alpha}: {total}");
            assert!(s.ln_pdf(0.5 - 30.0 * alpha.signum()).is_finite());
        }
    }

    #[test]
    fn sample_mean_matches_formula() {
        for alpha in [-4.0, 2.0] {
            let s = SkewNormal1D::new(0.0, 1.0, alpha).unwrap();
            let mut rng = seeded(21);
            let n = 100_000;
            let mean = (0..n).map(|_| s.draw(&mut rng)).sum::<f64>() / n as f64;
            assert!((mean - s.mean()).abs() < 0.02, "alpha {alpha}: {mean} vs {}", s.mean());
        }
    }

    #[test]
    fn sample_skewness_matches_formula() {
        for (i, alpha) in [-4.0, -1.0, 0.0, 2.0].into_iter().enumerate() {
            let s = SkewNormal1D::new(0.0, 1.0, alpha).unwrap();
            let mut rng = seeded(100 + i as u64);
            let n = 1_000_000;
            let xs: Vec<f64> = (0..n).map(|_| s.draw(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n as f64;
            let skew = m3 / m2.powf(1.5);
            assert!((skew - s.skewness()).abs() < 0.05, "alpha {alpha}: {skew} vs {}", s.skewness());
            assert!((m2 - s.variance()).abs() < 0.01);
        }
    }
}
