use rand::{Rng, RngCore};

use super::{check_dim, Density};
use crate::error::{CdeError, Result};
use crate::numcore::logsumexp;

/// Finite mixture `Σ_k w_k p_k(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture<C> {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<C>,
}

impl<C: Density> GaussianMixture<C> {
    pub fn new(weights: Vec<f64>, components: Vec<C>) -> Result<Self> {
        if components.is_empty() {
            return Err(CdeError::Empty("mixture components"));
        }
        check_dim(components.len(), &weights)?;
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(CdeError::invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CdeError::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(CdeError::invalid("mixture components differ in dimension"));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(GaussianMixture {
            weights,
            log_weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[C] {
        &self.components
    }

    /// Draws a point together with the index of the component it came from.
    pub fn sample_with_component(&self, rng: &mut dyn RngCore) -> (usize, Vec<f64>) {
        let k = sample_categorical(&self.weights, rng);
        (k, self.components[k].sample(rng))
    }
}

impl<C: Density> Density for GaussianMixture<C> {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn log_pdf(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.dim(), z)?;
        let terms = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| Ok(lw + c.log_pdf(z)?))
            .collect::<Result<Vec<f64>>>()?;
        logsumexp(&terms)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample_with_component(rng).1
    }
}

/// Index drawn with probability proportional to `weights` (assumed normalized).
/// Zero-weight entries are never selected.
pub fn sample_categorical(weights: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = k;
            cum += w;
            if u < cum {
                return k;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DiagonalGaussian, Gaussian1D};
    use crate::rng::seeded;

    #[test]
    fn single_component_equals_component() {
        let g = Gaussian1D::new(0.3, 1.7).unwrap();
        let m = GaussianMixture::new(vec![1.0], vec![g]).unwrap();
        for y in [-2.0, 0.0, 5.0] {
            assert_eq!(m.log_pdf(&[y]).unwrap(), g.log_pdf(&[y]).unwrap());
        }
    }

    #[test]
    fn logsumexp_path_matches_naive_sum() {
        let comps = vec![
            DiagonalGaussian::new(vec![0.0, 1.0], vec![1.0, 0.5]).unwrap(),
            DiagonalGaussian::new(vec![-1.0, 2.0], vec![0.7, 1.5]).unwrap(),
            DiagonalGaussian::new(vec![2.0, 0.0], vec![1.2, 1.0]).unwrap(),
        ];
        let w = vec![0.2, 0.5, 0.3];
        let m = GaussianMixture::new(w.clone(), comps.clone()).unwrap();
        for z in [[0.0, 0.0], [1.0, 1.5], [-0.5, 2.2]] {
            let naive: f64 = w
                .iter()
                .zip(&comps)
                .map(|(wk, c)| wk * c.log_pdf(&z).unwrap().exp())
                .sum::<f64>()
                .ln();
            assert!((m.log_pdf(&z).unwrap() - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_weights_pick_first_component() {
        let comps = vec![
            Gaussian1D::new(-100.0, 1.0).unwrap(),
            Gaussian1D::new(100.0, 1.0).unwrap(),
        ];
        let m = GaussianMixture::new(vec![1.0, 0.0], comps).unwrap();
        let mut rng = seeded(1);
        for _ in 0..1000 {
            assert_eq!(m.sample_with_component(&mut rng).0, 0);
        }
    }

    #[test]
    fn validates_weights() {
        let g = Gaussian1D::standard();
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![g, g]).is_err());
        assert!(GaussianMixture::new(vec![-0.5, 1.5], vec![g, g]).is_err());
        assert!(GaussianMixture::<Gaussian1D>::new(vec![], vec![]).is_err());
    }
}
