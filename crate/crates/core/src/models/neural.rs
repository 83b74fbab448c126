use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::heads::{
    kmn_log_density, kmn_output_dim, mdn_log_density, mdn_output_dim, nfn_log_density,
    nfn_output_dim, nfn_transform, MDN_STD_FLOOR,
};
use super::mlp::Mlp;
use super::{CondDensityModel, ModelSpec};
use crate::data::{Dataset, Standardizer};
use crate::distributions::{check_dim, DiagonalGaussian, GaussianMixture};
use crate::error::{CdeError, Result};
use crate::numcore::{inverse_softplus, softmax, softplus, Parameter, Tape, Tensor, Var};
use crate::rng::std_normal;

/// Rows evaluated per tape when scoring many points.
const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Mdn {
        n_components: usize,
    },
    Kmn {
        n_centers: usize,
        n_scales: usize,
        /// Row-major `[n_centers, y_dim]` in standardized y units.
        centers: Vec<f64>,
    },
    Nfn {
        n_radial: usize,
    },
}

/// Neural conditional density estimator: an MLP trunk on standardized `x`
/// feeding one of the MDN, KMN or NFN heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    x_dim: usize,
    y_dim: usize,
    head: Head,
    mlp: Mlp,
    params: Vec<Parameter>,
    standardizer: Standardizer,
}

/// Value and gradients of `cond_log_pdf` at one point, in original units.
#[derive(Clone, Debug)]
pub struct PointGradients {
    pub value: f64,
    pub params: Vec<Tensor>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl NeuralModel {
    /// Randomly initialized model with an identity standardizer. KMN centers
    /// start as standard-normal draws until `fit` replaces them with k-means
    /// centers of the training targets.
    pub fn new(spec: &ModelSpec, x_dim: usize, y_dim: usize, rng: &mut dyn RngCore) -> Result<Self> {
        if x_dim == 0 || y_dim == 0 {
            return Err(CdeError::invalid("x and y dimensions must be positive"));
        }
        let (head, hidden, out_dim, init_scales) = match spec {
            ModelSpec::Mdn { n_components, hidden } => {
                if *n_components == 0 {
                    return Err(CdeError::invalid("MDN needs at least one component"));
                }
                let head = Head::Mdn { n_components: *n_components };
                (head, hidden, mdn_output_dim(*n_components, y_dim), None)
            }
            ModelSpec::Kmn { n_centers, init_scales, hidden } => {
                if *n_centers == 0 || init_scales.is_empty() {
                    return Err(CdeError::invalid("KMN needs at least one center and one scale"));
                }
                if init_scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                    return Err(CdeError::invalid("KMN initial scales must be finite and > 0"));
                }
                let centers = (0..n_centers * y_dim).map(|_| std_normal(rng)).collect();
                let head = Head::Kmn {
                    n_centers: *n_centers,
                    n_scales: init_scales.len(),
                    centers,
                };
                let out = kmn_output_dim(*n_centers, init_scales.len());
                (head, hidden, out, Some(init_scales))
            }
            ModelSpec::Nfn { n_radial, hidden } => {
                let head = Head::Nfn { n_radial: *n_radial };
                (head, hidden, nfn_output_dim(*n_radial, y_dim), None)
            }
            other => {
                return Err(CdeError::invalid(format!(
                    "{} is not a neural model",
                    other.label()
                )))
            }
        };
        let mlp = Mlp::new(x_dim, hidden, out_dim)?;
        let mut params = mlp.init_params(rng);
        if let Some(scales) = init_scales {
            let raw = scales.iter().map(|s| inverse_softplus(*s)).collect();
            params.push(Parameter::new("kmn.scale", Tensor::row(raw), false));
        }
        Ok(NeuralModel {
            x_dim,
            y_dim,
            head,
            mlp,
            params,
            standardizer: Standardizer::identity(x_dim, y_dim),
        })
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn set_standardizer(&mut self, standardizer: Standardizer) -> Result<()> {
        if standardizer.x_mean.len() != self.x_dim || standardizer.y_mean.len() != self.y_dim {
            return Err(CdeError::invalid("standardizer dimensions do not match the model"));
        }
        self.standardizer = standardizer;
        Ok(())
    }

    /// KMN centers in standardized y units, row-major.
    pub fn kmn_centers(&self) -> Option<&[f64]> {
        match &self.head {
            Head::Kmn { centers, .. } => Some(centers),
            _ => None,
        }
    }

    pub fn set_kmn_centers(&mut self, new_centers: Vec<f64>) -> Result<()> {
        let y_dim = self.y_dim;
        match &mut self.head {
            Head::Kmn { n_centers, centers, .. } => {
                check_dim(*n_centers * y_dim, &new_centers)?;
                *centers = new_centers;
                Ok(())
            }
            _ => Err(CdeError::invalid("only KMN models have centers")),
        }
    }

    /// Trains on `data` with the given trainer configuration.
    pub fn fit(
        &mut self,
        data: &Dataset,
        config: &crate::trainer::TrainerConfig,
    ) -> Result<crate::trainer::TrainReport> {
        crate::trainer::train(self, data, config)
    }

    fn head_graph(&self, tape: &mut Tape, pvars: &[Var], x: Var, y: Var) -> Result<Var> {
        let out = self.mlp.forward(tape, pvars, x)?;
        let d = self.y_dim;
        match &self.head {
            Head::Mdn { n_components } => mdn_log_density(tape, out, y, *n_components, d),
            Head::Kmn { n_centers, n_scales, centers } => {
                let neg = Tensor::row(centers.iter().map(|c| -c).collect());
                let neg = tape.constant(neg)?;
                let scale = pvars[self.mlp.n_tensors()];
                kmn_log_density(tape, out, y, neg, scale, *n_centers, *n_scales, d)
            }
            Head::Nfn { n_radial } => nfn_log_density(tape, out, y, *n_radial, d),
        }
    }

    fn check_batch(&self, x: &Tensor, y: &Tensor) -> Result<()> {
        if x.cols() != self.x_dim || y.cols() != self.y_dim || x.rows() != y.rows() {
            return Err(CdeError::Shape {
                op: "neural model",
                detail: format!(
                    "x {:?} and y {:?} for a model with x_dim={} y_dim={}",
                    x.shape(),
                    y.shape(),
                    self.x_dim,
                    self.y_dim
                ),
            });
        }
        Ok(())
    }

    /// Per-row log-densities of already standardized inputs.
    pub fn log_density_standardized(&self, x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
        self.check_batch(x, y)?;
        let mut tape = Tape::new();
        let pvars = self
            .params
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        let xv = tape.constant(x.clone())?;
        let yv = tape.constant(y.clone())?;
        let lp = self.head_graph(&mut tape, &pvars, xv, yv)?;
        Ok(tape.value(lp).data().to_vec())
    }

    /// Mean negative log-likelihood of a standardized batch and its gradient
    /// with respect to every parameter tensor.
    pub fn nll_and_gradients(&self, x: Tensor, y: Tensor) -> Result<(f64, Vec<Tensor>)> {
        self.check_batch(&x, &y)?;
        let mut tape = Tape::new();
        let pvars = self
            .params
            .iter()
            .map(|p| tape.variable(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        let xv = tape.constant(x)?;
        let yv = tape.constant(y)?;
        let lp = self.head_graph(&mut tape, &pvars, xv, yv)?;
        let mean = tape.mean(lp);
        let loss = tape.neg(mean);
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        let grads = pvars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| {
                grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()))
            })
            .collect();
        Ok((value, grads))
    }

    /// `cond_log_pdf(x, y)` with its gradient with respect to the parameters
    /// and both inputs, all in original units.
    pub fn log_pdf_gradients(&self, x: &[f64], y: &[f64]) -> Result<PointGradients> {
        check_dim(self.x_dim, x)?;
        check_dim(self.y_dim, y)?;
        let s = &self.standardizer;
        let mut tape = Tape::new();
        let pvars = self
            .params
            .iter()
            .map(|p| tape.variable(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        let xv = tape.variable(Tensor::row(s.transform_x(x)))?;
        let yv = tape.variable(Tensor::row(s.transform_y(y)))?;
        let lp = self.head_graph(&mut tape, &pvars, xv, yv)?;
        let lp = tape.sum(lp);
        let value = tape.value(lp).item() + s.log_jacobian();
        let mut grads = tape.backward(lp)?;
        let params = pvars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| {
                grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()))
            })
            .collect();
        let chain = |g: Option<Tensor>, std: &[f64]| -> Vec<f64> {
            let g = g.map(Tensor::into_data).unwrap_or_else(|| vec![0.0; std.len()]);
            g.iter().zip(std).map(|(g, s)| g / s).collect()
        };
        let gx = chain(grads.take(xv), &s.x_std);
        let gy = chain(grads.take(yv), &s.y_std);
        Ok(PointGradients {
            value,
            params,
            x: gx,
            y: gy,
        })
    }

    fn raw_output(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.x_dim, x)?;
        let mut tape = Tape::new();
        let pvars = self
            .params
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        let xv = tape.constant(Tensor::row(self.standardizer.transform_x(x)))?;
        let out = self.mlp.forward(&mut tape, &pvars, xv)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// The conditional mixture at `x` in original y units (MDN and KMN).
    pub fn mixture_at(&self, x: &[f64]) -> Result<GaussianMixture<DiagonalGaussian>> {
        let out = self.raw_output(x)?;
        let d = self.y_dim;
        let s = &self.standardizer;
        let to_original = |mean: &[f64], std: &[f64]| {
            DiagonalGaussian::new(
                s.inverse_y(mean),
                std.iter().zip(&s.y_std).map(|(a, b)| a * b).collect(),
            )
        };
        match &self.head {
            Head::Mdn { n_components: k } => {
                let k = *k;
                let weights = softmax(&out[..k])?;
                let comps = (0..k)
                    .map(|c| {
                        let mu = &out[k + c * d..k + (c + 1) * d];
                        let sd: Vec<f64> = out[k + k * d + c * d..k + k * d + (c + 1) * d]
                            .iter()
                            .map(|r| softplus(*r) + MDN_STD_FLOOR)
                            .collect();
                        to_original(mu, &sd)
                    })
                    .collect::<Result<Vec<_>>>()?;
                GaussianMixture::new(weights, comps)
            }
            Head::Kmn { n_centers, n_scales, centers } => {
                let raw = self.params[self.mlp.n_tensors()].value.data();
                let scales: Vec<f64> = raw.iter().map(|r| softplus(*r)).collect();
                let weights = softmax(&out)?;
                let mut comps = Vec::with_capacity(n_centers * n_scales);
                for c in 0..*n_centers {
                    for sc in &scales {
                        comps.push(to_original(&centers[c * d..(c + 1) * d], &vec![*sc; d])?);
                    }
                }
                GaussianMixture::new(weights, comps)
            }
            Head::Nfn { .. } => Err(CdeError::Unsupported(
                "NFN densities are not Gaussian mixtures".into(),
            )),
        }
    }

    /// NFN data-to-base map at `(x, y)` in standardized coordinates:
    /// base point and log-abs-determinant of its Jacobian.
    pub fn flow_map(&self, x: &[f64], y_standardized: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.y_dim, y_standardized)?;
        match &self.head {
            Head::Nfn { n_radial } => {
                let out = self.raw_output(x)?;
                Ok(nfn_transform(&out, y_standardized, *n_radial))
            }
            _ => Err(CdeError::invalid("flow_map is only defined for NFN models")),
        }
    }

    fn nfn_sample(&self, x: &[f64], n_radial: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        if self.y_dim != 1 {
            return Err(CdeError::Unsupported(
                "NFN sampling is only available for one-dimensional y".into(),
            ));
        }
        let out = self.raw_output(x)?;
        let target = std_normal(rng);
        let map = |y: f64| nfn_transform(&out, &[y], n_radial).0[0];
        let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
        let mut expansions = 0;
        while map(lo) > target || map(hi) < target {
            if map(lo) > target {
                lo *= 2.0;
            }
            if map(hi) < target {
                hi *= 2.0;
            }
            expansions += 1;
            if expansions > 1100 {
                return Err(CdeError::invalid("could not bracket the NFN inverse"));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if map(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(self.standardizer.inverse_y(&[0.5 * (lo + hi)]))
    }
}

impl CondDensityModel for NeuralModel {
    fn x_dim(&self) -> usize {
        self.x_dim
    }

    fn y_dim(&self) -> usize {
        self.y_dim
    }

    fn cond_log_pdf(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.x_dim, x)?;
        check_dim(self.y_dim, y)?;
        let s = &self.standardizer;
        let lp = self.log_density_standardized(
            &Tensor::row(s.transform_x(x)),
            &Tensor::row(s.transform_y(y)),
        )?;
        Ok(lp[0] + s.log_jacobian())
    }

    fn cond_log_pdf_batch(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.x_dim() != self.x_dim || data.y_dim() != self.y_dim {
            return Err(CdeError::Dimension {
                expected: self.x_dim + self.y_dim,
                got: data.x_dim() + data.y_dim(),
            });
        }
        let s = &self.standardizer;
        let jac = s.log_jacobian();
        let mut all = Vec::with_capacity(data.len());
        let mut start = 0;
        while start < data.len() {
            let end = (start + EVAL_CHUNK).min(data.len());
            let xs = s.transform_x(&data.x()[start * self.x_dim..end * self.x_dim]);
            let ys = s.transform_y(&data.y()[start * self.y_dim..end * self.y_dim]);
            let lp = self.log_density_standardized(
                &Tensor::matrix(end - start, self.x_dim, xs)?,
                &Tensor::matrix(end - start, self.y_dim, ys)?,
            )?;
            all.extend(lp.into_iter().map(|v| v + jac));
            start = end;
        }
        Ok(all)
    }

    fn cond_sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        use crate::distributions::Density;
        match &self.head {
            Head::Nfn { n_radial } => self.nfn_sample(x, *n_radial, rng),
            _ => Ok(self.mixture_at(x)?.sample(rng)),
        }
    }
}
