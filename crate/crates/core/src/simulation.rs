//! Data-generating processes with exact conditional densities.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{
    check_dim, sample_categorical, Density, FullGaussian, Gaussian1D, SkewNormal1D,
};
use crate::error::{CdeError, Result};
use crate::models::CondDensityModel;
use crate::numcore::{logsumexp, sigmoid};
use crate::rng::{seeded, std_normal};

/// A simulator is its own ground-truth conditional density.
pub trait Simulator: CondDensityModel + Send + Sync {
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Dataset>;
}

fn one() -> f64 {
    1.0
}

fn zero() -> f64 {
    0.0
}

fn alpha_low() -> f64 {
    -4.0
}

fn x_std() -> f64 {
    0.5
}

/// `x ~ N(0, x_std²)`, `y | x ~ SkewNormal(ξ(x), ω(x), α(x))` with
/// `ξ = a x + b`, `ω = c x² + d` and `α = α_low + sigmoid(x) (α_high - α_low)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewNormalSim {
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "zero")]
    pub b: f64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "one")]
    pub d: f64,
    #[serde(default = "alpha_low")]
    pub alpha_low: f64,
    #[serde(default = "zero")]
    pub alpha_high: f64,
    #[serde(default = "x_std")]
    pub x_std: f64,
}

impl Default for SkewNormalSim {
    fn default() -> Self {
        SkewNormalSim {
            a: 1.0,
            b: 0.0,
            c: 1.0,
            d: 1.0,
            alpha_low: alpha_low(),
            alpha_high: 0.0,
            x_std: x_std(),
        }
    }
}

impl SkewNormalSim {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.c, self.d, self.alpha_low, self.alpha_high, self.x_std];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(CdeError::invalid("skew-normal simulator parameters must be finite"));
        }
        if !(self.d > 0.0 && self.c >= 0.0) {
            return Err(CdeError::invalid("skew-normal simulator needs d > 0 and c >= 0"));
        }
        if !(self.x_std > 0.0) {
            return Err(CdeError::invalid("x_std must be > 0"));
        }
        Ok(())
    }

    pub fn alpha(&self, x: f64) -> f64 {
        self.alpha_low + sigmoid(x) * (self.alpha_high - self.alpha_low)
    }

    /// The conditional distribution of y at `x`.
    pub fn conditional(&self, x: f64) -> Result<SkewNormal1D> {
        SkewNormal1D::new(self.a * x + self.b, self.c * x * x + self.d, self.alpha(x))
    }
}

impl CondDensityModel for SkewNormalSim {
    fn x_dim(&self) -> usize {
        1
    }

    fn y_dim(&self) -> usize {
        1
    }

    fn cond_log_pdf(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(1, x)?;
        check_dim(1, y)?;
        Ok(self.conditional(x[0])?.ln_pdf(y[0]))
    }

    fn cond_sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        check_dim(1, x)?;
        Ok(vec![self.conditional(x[0])?.draw(rng)])
    }
}

impl Simulator for SkewNormalSim {
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
        self.validate()?;
        let px = Gaussian1D::new(0.0, self.x_std)?;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = px.draw(rng);
            x.push(xi);
            y.push(self.conditional(xi)?.draw(rng));
        }
        Dataset::new(1, 1, x, y)
    }
}

fn default_components() -> usize {
    5
}

/// Construction parameters of a random [`GmmSim`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmConfig {
    #[serde(default = "default_components")]
    pub n_components: usize,
    /// Seed for the mixture parameters, independent of the sampling seed.
    #[serde(default)]
    pub param_seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            n_components: default_components(),
            param_seed: 0,
        }
    }
}

const GMM_MEAN_STD: f64 = 1.5;
const COV_ENTRY_MEAN: f64 = 1.0;
const COV_ENTRY_STD: f64 = 0.5;
/// Smallest eigenvalue kept when projecting random covariances.
pub const COV_EIGEN_FLOOR: f64 = 0.05;

/// Mixture whose components factorize over x and y:
/// `p(x, y) = Σ_k w_k N(x | μ_xk, Σ_xk) N(y | μ_yk, Σ_yk)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmSim {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    x_components: Vec<FullGaussian>,
    y_components: Vec<FullGaussian>,
}

/// Symmetric 2×2 matrix with eigenvalues clamped from below, row-major.
pub fn project_2x2(a: f64, b: f64, c: f64, floor: f64) -> [f64; 4] {
    // eigen-decomposition of [[a, b], [b, c]]
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (cs, sn) = (theta.cos(), theta.sin());
    let (m1, m2) = (l1.max(floor), l2.max(floor));
    let xx = m1 * cs * cs + m2 * sn * sn;
    let yy = m1 * sn * sn + m2 * cs * cs;
    let xy = (m1 - m2) * cs * sn;
    [xx, xy, xy, yy]
}

impl GmmSim {
    pub fn new(
        weights: Vec<f64>,
        x_components: Vec<FullGaussian>,
        y_components: Vec<FullGaussian>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(CdeError::Empty("GMM components"));
        }
        check_dim(weights.len(), &vec![0.0; x_components.len()])?;
        check_dim(weights.len(), &vec![0.0; y_components.len()])?;
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(CdeError::invalid("GMM weights must be positive and sum to 1"));
        }
        let dx = x_components[0].dim();
        let dy = y_components[0].dim();
        if x_components.iter().any(|c| c.dim() != dx) || y_components.iter().any(|c| c.dim() != dy) {
            return Err(CdeError::invalid("GMM components differ in dimension"));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(GmmSim {
            weights,
            log_weights,
            x_components,
            y_components,
        })
    }

    /// Random parameters: normalized uniform weights, means from
    /// `N(0, 1.5²)`, and 2×2 covariance blocks with `N(1, 0.5²)` entries
    /// projected to eigenvalues `>= 0.05`.
    pub fn random(config: &GmmConfig) -> Result<Self> {
        if config.n_components == 0 {
            return Err(CdeError::invalid("GMM needs at least one component"));
        }
        let mut rng = seeded(config.param_seed);
        let raw: Vec<f64> = (0..config.n_components)
            .map(|_| rng.random::<f64>().max(f64::MIN_POSITIVE))
            .collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        let block = |rng: &mut dyn RngCore| -> Result<FullGaussian> {
            let mean = (0..2).map(|_| GMM_MEAN_STD * std_normal(rng)).collect();
            let mut entry = || COV_ENTRY_MEAN + COV_ENTRY_STD * std_normal(rng);
            let (a, b, c) = (entry(), entry(), entry());
            FullGaussian::new(mean, project_2x2(a, b, c, COV_EIGEN_FLOOR).to_vec())
        };
        let mut xs = Vec::with_capacity(config.n_components);
        let mut ys = Vec::with_capacity(config.n_components);
        for _ in 0..config.n_components {
            xs.push(block(&mut rng)?);
            ys.push(block(&mut rng)?);
        }
        GmmSim::new(weights, xs, ys)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn x_components(&self) -> &[FullGaussian] {
        &self.x_components
    }

    pub fn y_components(&self) -> &[FullGaussian] {
        &self.y_components
    }

    /// `log w_k + log N(x | μ_xk, Σ_xk)` for every component.
    fn x_terms(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.x_components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| Ok(lw + c.log_pdf(x)?))
            .collect()
    }

    /// Posterior component weights `W_k(x)`.
    pub fn component_posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        let terms = self.x_terms(x)?;
        let lse = logsumexp(&terms)?;
        Ok(terms.iter().map(|t| (t - lse).exp()).collect())
    }

    pub fn joint_log_pdf(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let terms = self
            .x_terms(x)?
            .into_iter()
            .zip(&self.y_components)
            .map(|(t, c)| Ok(t + c.log_pdf(y)?))
            .collect::<Result<Vec<_>>>()?;
        logsumexp(&terms)
    }

    pub fn marginal_log_pdf(&self, x: &[f64]) -> Result<f64> {
        logsumexp(&self.x_terms(x)?)
    }
}

impl CondDensityModel for GmmSim {
    fn x_dim(&self) -> usize {
        self.x_components[0].dim()
    }

    fn y_dim(&self) -> usize {
        self.y_components[0].dim()
    }

    fn cond_log_pdf(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let xt = self.x_terms(x)?;
        let lse = logsumexp(&xt)?;
        let terms = xt
            .into_iter()
            .zip(&self.y_components)
            .map(|(t, c)| Ok(t - lse + c.log_pdf(y)?))
            .collect::<Result<Vec<_>>>()?;
        logsumexp(&terms)
    }

    fn cond_sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let k = sample_categorical(&self.component_posteriors(x)?, rng);
        Ok(self.y_components[k].sample(rng))
    }
}

impl GmmSim {
    /// Samples together with the component each row was drawn from.
    pub fn sample_with_components(&self, n: usize, rng: &mut dyn RngCore) -> Result<(Dataset, Vec<usize>)> {
        let mut out = Dataset::empty(self.x_dim(), self.y_dim());
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let k = sample_categorical(&self.weights, rng);
            let x = self.x_components[k].sample(rng);
            let y = self.y_components[k].sample(rng);
            out.push(&x, &y)?;
            labels.push(k);
        }
        Ok((out, labels))
    }
}

impl Simulator for GmmSim {
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
        Ok(self.sample_with_components(n, rng)?.0)
    }
}

/// Simulator selection as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimulatorSpec {
    SkewNormal(SkewNormalSim),
    Gmm(GmmConfig),
}

impl SimulatorSpec {
    pub fn build(&self) -> Result<Box<dyn Simulator>> {
        match self {
            SimulatorSpec::SkewNormal(s) => {
                s.validate()?;
                Ok(Box::new(s.clone()))
            }
            SimulatorSpec::Gmm(c) => Ok(Box::new(GmmSim::random(c)?)),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SimulatorSpec::SkewNormal(_) => "skew_normal",
            SimulatorSpec::Gmm(_) => "gmm",
        }
    }
}
