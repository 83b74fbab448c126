use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::special::{std_normal_cdf, LN_SQRT_2PI};
use super::{check_dim, Density};
use crate::error::{CdeError, Result};
use crate::rng::std_normal;

/// Univariate normal `N(mean, std²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1D {
    mean: f64,
    std: f64,
}

impl Gaussian1D {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(CdeError::invalid(format!(
                "Gaussian needs finite mean and std > 0, got ({mean}, {std})"
            )));
        }
        Ok(Gaussian1D { mean, std })
    }

    pub fn standard() -> Self {
        Gaussian1D {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        let z = (y - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - LN_SQRT_2PI
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        std_normal_cdf((y - self.mean) / self.std)
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        self.mean + self.std * std_normal(rng)
    }
}

impl Density for Gaussian1D {
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

/// Product of independent normals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(CdeError::Empty("diagonal Gaussian mean"));
        }
        check_dim(mean.len(), &std)?;
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(CdeError::invalid("diagonal Gaussian stds must be finite and > 0"));
        }
        Ok(DiagonalGaussian { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

impl Density for DiagonalGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_pdf(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.mean.len(), z)?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&y, &m), &s)| {
                let u = (y - m) / s;
                -0.5 * u * u - s.ln() - LN_SQRT_2PI
            })
            .sum())
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m + s * std_normal(rng))
            .collect()
    }
}

/// Multivariate normal with a dense covariance, evaluated through its
/// Cholesky factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullGaussian {
    mean: Vec<f64>,
    cov: Vec<f64>,
    #[serde(skip)]
    chol: Vec<f64>,
    #[serde(skip)]
    log_det: f64,
}

impl FullGaussian {
    /// `cov` is row-major `d × d`, symmetric positive definite.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(CdeError::Empty("Gaussian mean"));
        }
        check_dim(d * d, &cov)?;
        for i in 0..d {
            for j in 0..i {
                if (cov[i * d + j] - cov[j * d + i]).abs() > 1e-12 * (1.0 + cov[i * d + j].abs()) {
                    return Err(CdeError::invalid("covariance is not symmetric"));
                }
            }
        }
        let chol = cholesky(&cov, d)?;
        let log_det = 2.0 * (0..d).map(|i| chol[i * d + i].ln()).sum::<f64>();
        Ok(FullGaussian {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }
}

fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if !(v > 0.0) {
                    return Err(CdeError::invalid("covariance is not positive definite"));
                }
                l[i * d + j] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Ok(l)
}

impl Density for FullGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_pdf(&self, z: &[f64]) -> Result<f64> {
        let d = self.mean.len();
        check_dim(d, z)?;
        // forward substitution L v = z - mean
        let mut v = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|k| self.chol[i * d + k] * v[k]).sum();
            v[i] = (z[i] - self.mean[i] - s) / self.chol[i * d + i];
        }
        let quad: f64 = v.iter().map(|x| x * x).sum();
        Ok(-0.5 * quad - 0.5 * self.log_det - d as f64 * LN_SQRT_2PI)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let d = self.mean.len();
        let u: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
        (0..d)
            .map(|i| self.mean[i] + (0..=i).map(|k| self.chol[i * d + k] * u[k]).sum::<f64>())
            .collect()
    }
}

impl FullGaussian {
    /// Rebuilds derived state after deserialization.
    pub fn revalidated(self) -> Result<Self> {
        FullGaussian::new(self.mean, self.cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / (n - 1) as f64;
        let s: f64 = (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * f(lo + i as f64 * h)
            })
            .sum();
        s * h
    }

    #[test]
    fn standard_normal_mode() {
        let g = Gaussian1D::standard();
        assert!((g.ln_pdf(0.0) + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((g.ln_pdf(0.0) + 0.9189).abs() < 1e-4);
        assert!(g.log_pdf(&[0.0, 1.0]).is_err());
        assert!(Gaussian1D::new(0.0, 0.0).is_err());
    }

    #[test]
    fn integrates_to_one() {
        let g = Gaussian1D::new(1.3, 0.4).unwrap();
        let total = trapezoid(|y| g.pdf(y), 1.3 - 4.0, 1.3 + 4.0, 10_000);
        assert!((total - 1.0).abs() < 1e-4);
    }

    #[test]
    fn sample_moments() {
        let g = Gaussian1D::standard();
        let mut rng = seeded(11);
        let xs: Vec<f64> = (0..100_000).map(|_| g.draw(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02);
        assert!((var.sqrt() - 1.0).abs() < 0.02);
    }

    #[test]
    fn diagonal_matches_product_of_univariates() {
        let d = DiagonalGaussian::new(vec![0.5, -1.0], vec![2.0, 0.3]).unwrap();
        let z = [0.1, -0.7];
        let expected = Gaussian1D::new(0.5, 2.0).unwrap().ln_pdf(0.1)
            + Gaussian1D::new(-1.0, 0.3).unwrap().ln_pdf(-0.7);
        assert!((d.log_pdf(&z).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn full_gaussian_agrees_with_diagonal_case_and_closed_form() {
        let f = FullGaussian::new(vec![0.5, -1.0], vec![4.0, 0.0, 0.0, 0.09]).unwrap();
        let d = DiagonalGaussian::new(vec![0.5, -1.0], vec![2.0, 0.3]).unwrap();
        let z = [0.1, -0.7];
        assert!((f.log_pdf(&z).unwrap() - d.log_pdf(&z).unwrap()).abs() < 1e-13);

        // correlated 2x2 against the explicit inverse/determinant formula
        let (a, b, c) = (1.5, 0.6, 0.8);
        let g = FullGaussian::new(vec![0.0, 0.0], vec![a, b, b, c]).unwrap();
        let det: f64 = a * c - b * b;
        let (x, y) = (0.4, -0.9);
        let quad = (c * x * x - 2.0 * b * x * y + a * y * y) / det;
        let expected = -0.5 * quad - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln();
        assert!((g.log_pdf(&[x, y]).unwrap() - expected).abs() < 1e-13);
        assert!(FullGaussian::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn full_gaussian_sample_covariance() {
        let g = FullGaussian::new(vec![1.0, -2.0], vec![1.5, 0.6, 0.6, 0.8]).unwrap();
        let mut rng = seeded(5);
        let n = 200_000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| g.sample(&mut rng)).collect();
        let m0 = xs.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let m1 = xs.iter().map(|v| v[1]).sum::<f64>() / n as f64;
        let c01 = xs.iter().map(|v| (v[0] - m0) * (v[1] - m1)).sum::<f64>() / n as f64;
        let c11 = xs.iter().map(|v| (v[1] - m1).powi(2)).sum::<f64>() / n as f64;
        assert!((m0 - 1.0).abs() < 0.01 && (m1 + 2.0).abs() < 0.01);
        assert!((c01 - 0.6).abs() < 0.02 && (c11 - 0.8).abs() < 0.02);
    }
}
