//! Kernel density baselines: joint KDE, conditional KDE as a ratio of KDEs,
//! and an ε-neighborhood conditional KDE.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{check_dim, LN_SQRT_2PI};
use crate::error::{CdeError, Result};
use crate::models::CondDensityModel;
use crate::numcore::logsumexp;

const ROT_FACTOR: f64 = 1.06;
const GRID_SIZE: usize = 20;
const DEFAULT_K_FALLBACK: usize = 20;

/// Bandwidth selection for kernel estimators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    RuleOfThumb,
    #[default]
    CvMl,
}

/// Sample standard deviation (n - 1 denominator) of each column.
fn sample_std(points: &[f64], dim: usize) -> Vec<f64> {
    let n = points.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in points.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut ss = vec![0.0; dim];
    for row in points.chunks_exact(dim) {
        for ((s, v), m) in ss.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    ss.into_iter().map(|s| (s / (n as f64 - 1.0)).sqrt()).collect()
}

fn check_points(points: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(CdeError::invalid("point buffer does not match dimension"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(CdeError::invalid("points must be finite"));
    }
    Ok(points.len() / dim)
}

/// `1.06 σ_j n^(-1/(4+d))` for every column `j`, with `d` the data's own
/// dimension.
pub fn rot_bandwidth(points: &[f64], dim: usize) -> Result<Vec<f64>> {
    let n = check_points(points, dim)?;
    if n < 2 {
        return Err(CdeError::invalid("rule-of-thumb bandwidth needs at least 2 points"));
    }
    let factor = ROT_FACTOR * (n as f64).powf(-1.0 / (4.0 + dim as f64));
    sample_std(points, dim)
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            if s > 0.0 {
                Ok(factor * s)
            } else {
                Err(CdeError::invalid(format!("column {j} has zero variance")))
            }
        })
        .collect()
}

/// Twenty log-spaced multiples of `base` from 0.1 to 10, ascending.
pub fn default_grid(base: &[f64]) -> Vec<Vec<f64>> {
    (0..GRID_SIZE)
        .map(|i| {
            let m = 10f64.powf(-1.0 + 2.0 * i as f64 / (GRID_SIZE - 1) as f64);
            base.iter().map(|b| b * m).collect()
        })
        .collect()
}

fn log_kernel(a: &[f64], b: &[f64], h: &[f64], log_norm: f64) -> f64 {
    let mut q = 0.0;
    for ((u, v), s) in a.iter().zip(b).zip(h) {
        let t = (u - v) / s;
        q += t * t;
    }
    -0.5 * q - log_norm
}

fn log_norm(h: &[f64]) -> f64 {
    h.iter().map(|s| s.ln() + LN_SQRT_2PI).sum()
}

/// Leave-one-out log-likelihood `Σ_i log q̂_{-i}(z_i)`.
pub fn loo_log_likelihood(points: &[f64], dim: usize, h: &[f64]) -> Result<f64> {
    let n = check_points(points, dim)?;
    check_dim(dim, h)?;
    if n < 2 {
        return Err(CdeError::invalid("leave-one-out needs at least 2 points"));
    }
    let norm = log_norm(h);
    let mut terms = Vec::with_capacity(n - 1);
    let mut total = 0.0;
    for i in 0..n {
        terms.clear();
        let zi = &points[i * dim..(i + 1) * dim];
        for j in (0..n).filter(|&j| j != i) {
            terms.push(log_kernel(zi, &points[j * dim..(j + 1) * dim], h, norm));
        }
        total += logsumexp(&terms)? - ((n - 1) as f64).ln();
    }
    Ok(total)
}

/// Grid entry with the highest leave-one-out log-likelihood; among equal
/// scores the smallest bandwidth (lexicographically) wins.
pub fn cvml_bandwidth(points: &[f64], dim: usize, grid: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = check_points(points, dim)?;
    if n < 3 {
        return Err(CdeError::invalid("CV-ML bandwidth needs at least 3 points"));
    }
    if grid.is_empty() {
        return Err(CdeError::Empty("bandwidth grid"));
    }
    let mut best: Option<(f64, &Vec<f64>)> = None;
    for h in grid {
        if h.len() != dim || h.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CdeError::invalid(format!("invalid grid bandwidth {h:?}")));
        }
        let score = loo_log_likelihood(points, dim, h)?;
        if score.is_nan() || score == f64::NEG_INFINITY {
            continue;
        }
        let better = match best {
            None => true,
            Some((s, bh)) => score > s || (score == s && h.as_slice() < bh.as_slice()),
        };
        if better {
            best = Some((score, h));
        }
    }
    best.map(|(_, h)| h.clone())
        .ok_or_else(|| CdeError::invalid("every grid bandwidth gives a -inf leave-one-out likelihood"))
}

/// Product-Gaussian kernel density estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    dim: usize,
    points: Vec<f64>,
    bandwidth: Vec<f64>,
}

impl KdeModel {
    pub fn new(points: Vec<f64>, dim: usize, bandwidth: Vec<f64>) -> Result<Self> {
        let n = check_points(&points, dim)?;
        if n == 0 {
            return Err(CdeError::Empty("KDE points"));
        }
        check_dim(dim, &bandwidth)?;
        if bandwidth.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CdeError::invalid("KDE bandwidths must be finite and > 0"));
        }
        Ok(KdeModel { dim, points, bandwidth })
    }

    pub fn fit(points: Vec<f64>, dim: usize, rule: BandwidthRule) -> Result<Self> {
        let rot = rot_bandwidth(&points, dim)?;
        let h = match rule {
            BandwidthRule::RuleOfThumb => rot,
            BandwidthRule::CvMl => cvml_bandwidth(&points, dim, &default_grid(&rot))?,
        };
        KdeModel::new(points, dim, h)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn log_pdf(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.dim, z)?;
        let norm = log_norm(&self.bandwidth);
        let terms: Vec<f64> = self
            .points
            .chunks_exact(self.dim)
            .map(|p| log_kernel(z, p, &self.bandwidth, norm))
            .collect();
        Ok(logsumexp(&terms)? - (self.len() as f64).ln())
    }
}

/// Below this marginal density the conditional ratio is not trusted.
pub const MIN_MARGINAL_LOG: f64 = -690.7755278982137;

/// Conditional KDE: a joint KDE over `(x, y)` divided by the marginal KDE
/// over `x` that shares the joint's x bandwidths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkdeModel {
    x_dim: usize,
    y_dim: usize,
    joint: KdeModel,
    marginal: KdeModel,
}

impl CkdeModel {
    /// Bandwidths are selected on the joint sample.
    pub fn fit(data: &Dataset, rule: BandwidthRule) -> Result<Self> {
        let d = data.x_dim() + data.y_dim();
        let joint = KdeModel::fit(data.joint(), d, rule)?;
        CkdeModel::with_bandwidth(data, joint.bandwidth().to_vec())
    }

    /// Joint bandwidths `(h_x, h_y)`; the marginal reuses `h_x`.
    pub fn with_bandwidth(data: &Dataset, bandwidth: Vec<f64>) -> Result<Self> {
        let d = data.x_dim() + data.y_dim();
        let joint = KdeModel::new(data.joint(), d, bandwidth)?;
        let marginal = KdeModel::new(
            data.x().to_vec(),
            data.x_dim(),
            joint.bandwidth()[..data.x_dim()].to_vec(),
        )?;
        Ok(CkdeModel {
            x_dim: data.x_dim(),
            y_dim: data.y_dim(),
            joint,
            marginal,
        })
    }

    pub fn bandwidth(&self) -> &[f64] {
        self.joint.bandwidth()
    }
}

impl CondDensityModel for CkdeModel {
    fn x_dim(&self) -> usize {
        self.x_dim
    }

    fn y_dim(&self) -> usize {
        self.y_dim
    }

    fn cond_log_pdf(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.x_dim, x)?;
        check_dim(self.y_dim, y)?;
        let log_marginal = self.marginal.log_pdf(x)?;
        if !(log_marginal >= MIN_MARGINAL_LOG) {
            return Err(CdeError::VanishingMarginal { log_marginal });
        }
        let z: Vec<f64> = x.iter().chain(y).copied().collect();
        Ok(self.joint.log_pdf(&z)? - log_marginal)
    }
}

fn default_k() -> usize {
    DEFAULT_K_FALLBACK
}

/// ε-neighborhood conditional KDE: a KDE over the y values whose x lies
/// within the ellipsoid `Σ_j ((x_j - x'_j)/ε_j)² ≤ 1`. When no training
/// point qualifies, the `k` nearest (in the same scaled metric) are used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NkdeModel {
    x_dim: usize,
    y_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    epsilon: Vec<f64>,
    #[serde(default = "default_k")]
    k_fallback: usize,
    /// Used when the neighbors alone cannot support a rule-of-thumb bandwidth.
    global_y_bandwidth: Vec<f64>,
}

impl NkdeModel {
    /// `epsilon` defaults to the rule-of-thumb bandwidth of x.
    pub fn fit(data: &Dataset, epsilon: Option<f64>) -> Result<Self> {
        let eps = match epsilon {
            Some(e) if e > 0.0 => vec![e; data.x_dim()],
            Some(e) => return Err(CdeError::invalid(format!("epsilon must be > 0, got {e}"))),
            None => rot_bandwidth(data.x(), data.x_dim())?,
        };
        NkdeModel::with_epsilon(data, eps, DEFAULT_K_FALLBACK)
    }

    pub fn with_epsilon(data: &Dataset, epsilon: Vec<f64>, k_fallback: usize) -> Result<Self> {
        check_dim(data.x_dim(), &epsilon)?;
        if epsilon.iter().any(|e| !(*e > 0.0)) {
            return Err(CdeError::invalid("epsilon must be > 0"));
        }
        if k_fallback == 0 {
            return Err(CdeError::invalid("k fallback must be at least 1"));
        }
        let global_y_bandwidth = rot_bandwidth(data.y(), data.y_dim())?;
        Ok(NkdeModel {
            x_dim: data.x_dim(),
            y_dim: data.y_dim(),
            x: data.x().to_vec(),
            y: data.y().to_vec(),
            epsilon,
            k_fallback,
            global_y_bandwidth,
        })
    }

    fn n(&self) -> usize {
        self.x.len() / self.x_dim
    }

    fn scaled_sq_dist(&self, x: &[f64], i: usize) -> f64 {
        self.x[i * self.x_dim..(i + 1) * self.x_dim]
            .iter()
            .zip(x)
            .zip(&self.epsilon)
            .map(|((a, b), e)| ((a - b) / e).powi(2))
            .sum()
    }

    /// Indices of the training points used for a query at `x`.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let dist: Vec<f64> = (0..self.n()).map(|i| self.scaled_sq_dist(x, i)).collect();
        let inside: Vec<usize> = (0..self.n()).filter(|&i| dist[i] <= 1.0).collect();
        if !inside.is_empty() {
            return inside;
        }
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        order.truncate(self.k_fallback.min(self.n()));
        order
    }
}

impl CondDensityModel for NkdeModel {
    fn x_dim(&self) -> usize {
        self.x_dim
    }

    fn y_dim(&self) -> usize {
        self.y_dim
    }

    fn cond_log_pdf(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.x_dim, x)?;
        check_dim(self.y_dim, y)?;
        let idx = self.neighbors(x);
        let ys: Vec<f64> = idx
            .iter()
            .flat_map(|&i| self.y[i * self.y_dim..(i + 1) * self.y_dim].iter().copied())
            .collect();
        let h = rot_bandwidth(&ys, self.y_dim).unwrap_or_else(|_| self.global_y_bandwidth.clone());
        KdeModel::new(ys, self.y_dim, h)?.log_pdf(y)
    }
}
