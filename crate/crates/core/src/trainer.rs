//! Noise-regularized maximum-likelihood training.
//!
//! Training happens in standardized coordinates: `train` fits the model's
//! standardizer on the data first, so noise intensities are relative to a
//! unit per-dimension standard deviation.

use std::io::Write;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::error::{CdeError, Result};
use crate::models::{kmeans, NeuralModel};
use crate::numcore::{Adam, AdamConfig, Parameter, Tensor};
use crate::rng::{permutation, std_normal, stream};

/// Stream offsets added to `TrainerConfig::seed`. They are spaced `2^32`
/// apart so nearby seeds never share a stream.
pub const SHUFFLE_STREAM: u64 = 1 << 32;
pub const NOISE_STREAM: u64 = 2 << 32;
pub const KMEANS_STREAM: u64 = 3 << 32;

const RULE_OF_THUMB_FACTOR: f64 = 1.06;

fn one() -> f64 {
    1.0
}

fn default_sqrt_scale() -> f64 {
    RULE_OF_THUMB_FACTOR
}

fn default_h0() -> f64 {
    0.2
}

/// How the noise intensity depends on the training-set size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSchedule {
    /// `scale * 1.06 * σ * n^(-1/(4+d))`
    RuleOfThumb {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale * σ * n^(-1/(1+d))`
    SqrtDecay {
        #[serde(default = "default_sqrt_scale")]
        scale: f64,
    },
    Constant {
        #[serde(default = "default_h0")]
        h0: f64,
    },
    None,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::RuleOfThumb { scale: 1.0 }
    }
}

impl NoiseSchedule {
    pub fn rule_of_thumb() -> Self {
        NoiseSchedule::default()
    }

    pub fn sqrt_decay() -> Self {
        NoiseSchedule::SqrtDecay {
            scale: default_sqrt_scale(),
        }
    }

    pub fn constant(h0: f64) -> Self {
        NoiseSchedule::Constant { h0 }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NoiseSchedule::RuleOfThumb { .. } => "rule_of_thumb",
            NoiseSchedule::SqrtDecay { .. } => "sqrt_decay",
            NoiseSchedule::Constant { .. } => "constant",
            NoiseSchedule::None => "none",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match self {
            NoiseSchedule::RuleOfThumb { scale } | NoiseSchedule::SqrtDecay { scale } => *scale,
            NoiseSchedule::Constant { h0 } => {
                if !(*h0 >= 0.0 && h0.is_finite()) {
                    return Err(CdeError::invalid(format!("constant noise h0 must be >= 0, got {h0}")));
                }
                return Ok(());
            }
            NoiseSchedule::None => return Ok(()),
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(CdeError::invalid(format!("schedule scale must be > 0, got {v}")));
        }
        Ok(())
    }

    /// Intensity for a unit standard deviation.
    pub fn unit_bandwidth(&self, n: usize, d: usize) -> Result<f64> {
        if n == 0 || d == 0 {
            return Err(CdeError::invalid("bandwidth needs n >= 1 and d >= 1"));
        }
        self.validate()?;
        let (n, d) = (n as f64, d as f64);
        Ok(match self {
            NoiseSchedule::RuleOfThumb { scale } => {
                scale * RULE_OF_THUMB_FACTOR * n.powf(-1.0 / (4.0 + d))
            }
            NoiseSchedule::SqrtDecay { scale } => scale * n.powf(-1.0 / (1.0 + d)),
            NoiseSchedule::Constant { h0 } => *h0,
            NoiseSchedule::None => 0.0,
        })
    }
}

/// Per-coordinate noise intensities `(h_x, h_y)` for `n` samples of joint
/// dimension `d`. Decaying schedules scale with each coordinate's σ; a
/// constant schedule does not.
pub fn bandwidth(
    schedule: &NoiseSchedule,
    n: usize,
    d: usize,
    sigma_x: &[f64],
    sigma_y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let unit = schedule.unit_bandwidth(n, d)?;
    if sigma_x.iter().chain(sigma_y).any(|s| !(*s > 0.0)) {
        return Err(CdeError::invalid("bandwidth needs positive standard deviations"));
    }
    let per = |sigma: &[f64]| -> Vec<f64> {
        match schedule {
            NoiseSchedule::Constant { .. } | NoiseSchedule::None => vec![unit; sigma.len()],
            _ => sigma.iter().map(|s| unit * s).collect(),
        }
    };
    Ok((per(sigma_x), per(sigma_y)))
}

/// Which variables receive noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    #[default]
    Both,
    X,
    Y,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regularizer {
    #[default]
    None,
    /// Adds `λ Σ|w|` to the loss.
    L1 { lambda: f64 },
    /// Adds `λ Σ w²` to the loss.
    L2 { lambda: f64 },
    /// Multiplies weights by `1 - α λ` before every optimizer step.
    WeightDecay { lambda: f64 },
}

impl Regularizer {
    pub fn lambda(&self) -> f64 {
        match self {
            Regularizer::None => 0.0,
            Regularizer::L1 { lambda } | Regularizer::L2 { lambda } | Regularizer::WeightDecay { lambda } => {
                *lambda
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::L1 { .. } => "l1",
            Regularizer::L2 { .. } => "l2",
            Regularizer::WeightDecay { .. } => "weight_decay",
        }
    }

    /// Penalty value over the regularized parameters.
    pub fn penalty(&self, params: &[Parameter]) -> f64 {
        let weights = params.iter().filter(|p| p.regularized).flat_map(|p| p.value.data());
        match self {
            Regularizer::L1 { lambda } => lambda * weights.map(|w| w.abs()).sum::<f64>(),
            Regularizer::L2 { lambda } => lambda * weights.map(|w| w * w).sum::<f64>(),
            _ => 0.0,
        }
    }

    fn add_gradient(&self, params: &[Parameter], grads: &mut [Tensor]) {
        for (p, g) in params.iter().zip(grads.iter_mut()) {
            if !p.regularized {
                continue;
            }
            for (gi, w) in g.data_mut().iter_mut().zip(p.value.data()) {
                match self {
                    Regularizer::L1 { lambda } => {
                        if *w > 0.0 {
                            *gi += lambda;
                        } else if *w < 0.0 {
                            *gi -= lambda;
                        }
                    }
                    Regularizer::L2 { lambda } => *gi += 2.0 * lambda * w,
                    _ => {}
                }
            }
        }
    }

    fn decay(&self, params: &mut [Parameter], learning_rate: f64) {
        if let Regularizer::WeightDecay { lambda } = self {
            let factor = (1.0 - learning_rate * lambda).max(0.0);
            for p in params.iter_mut().filter(|p| p.regularized) {
                p.value.data_mut().iter_mut().for_each(|w| *w *= factor);
            }
        }
    }
}

fn default_epochs() -> usize {
    1000
}

fn default_batch() -> usize {
    32
}

fn default_lr() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub regularizer: Regularizer,
    #[serde(default)]
    pub noise_on: NoiseTarget,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            schedule: NoiseSchedule::default(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            regularizer: Regularizer::None,
            noise_on: NoiseTarget::Both,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(CdeError::invalid("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(CdeError::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CdeError::invalid("learning_rate must be positive"));
        }
        let lambda = self.regularizer.lambda();
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CdeError::invalid(format!("regularization strength must be >= 0, got {lambda}")));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub h_used: f64,
}

/// Outcome of a training run. Losses are mean negative log-likelihoods in
/// standardized units, without the regularization penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_nll: f64,
    pub trace: Vec<EpochRecord>,
    pub h_x: Vec<f64>,
    pub h_y: Vec<f64>,
}

impl TrainReport {
    pub fn final_nll(&self) -> f64 {
        self.trace.last().map_or(self.initial_nll, |r| r.train_nll)
    }

    /// CSV with columns `epoch,train_nll,h_used`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.trace {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Adds `h ξ` with fresh standard-normal `ξ` to every entry; `h_x` applies
/// per x column and `h_y` per y column. Zero intensities leave the values
/// untouched.
pub fn perturb_batch(batch: &mut Dataset, h_x: &[f64], h_y: &[f64], rng: &mut dyn RngCore) -> Result<()> {
    if h_x.len() != batch.x_dim() || h_y.len() != batch.y_dim() {
        return Err(CdeError::invalid("noise intensities do not match the batch dimensions"));
    }
    if h_x.iter().chain(h_y).any(|h| !(*h >= 0.0)) {
        return Err(CdeError::invalid("noise intensities must be >= 0"));
    }
    let (xs, ys) = batch.columns_mut();
    perturb(xs, h_x, rng);
    perturb(ys, h_y, rng);
    Ok(())
}

fn perturb(values: &mut [f64], h: &[f64], rng: &mut dyn RngCore) {
    if h.iter().all(|v| *v == 0.0) {
        return;
    }
    for row in values.chunks_exact_mut(h.len()) {
        for (v, s) in row.iter_mut().zip(h) {
            *v += s * std_normal(rng);
        }
    }
}

fn masked(h_x: Vec<f64>, h_y: Vec<f64>, target: NoiseTarget) -> (Vec<f64>, Vec<f64>) {
    let zero = |v: Vec<f64>| vec![0.0; v.len()];
    match target {
        NoiseTarget::Both => (h_x, h_y),
        NoiseTarget::X => (h_x, zero(h_y)),
        NoiseTarget::Y => (zero(h_x), h_y),
    }
}

fn h_summary(h_x: &[f64], h_y: &[f64]) -> f64 {
    h_x.iter().chain(h_y).fold(0.0, |a, b| a.max(*b))
}

/// Fits the standardizer (and KMN centers) to `data` and returns the
/// standardized copy the optimizer works on.
fn prepare(model: &mut NeuralModel, data: &Dataset, seed: u64) -> Result<Dataset> {
    if data.is_empty() {
        return Err(CdeError::Empty("training data"));
    }
    if data.x_dim() != crate::models::CondDensityModel::x_dim(model)
        || data.y_dim() != crate::models::CondDensityModel::y_dim(model)
    {
        return Err(CdeError::invalid("training data dimensions do not match the model"));
    }
    let standardizer = Standardizer::fit(data)?;
    let std_data = standardizer.transform(data);
    model.set_standardizer(standardizer)?;
    if let crate::models::Head::Kmn { n_centers, .. } = model.head() {
        let k = *n_centers;
        let centers = kmeans(std_data.y(), std_data.y_dim(), k, &mut stream(seed, KMEANS_STREAM))?;
        model.set_kmn_centers(centers)?;
    }
    Ok(std_data)
}

fn tensors(batch: &Dataset) -> Result<(Tensor, Tensor)> {
    Ok((
        Tensor::matrix(batch.len(), batch.x_dim(), batch.x().to_vec())?,
        Tensor::matrix(batch.len(), batch.y_dim(), batch.y().to_vec())?,
    ))
}

fn full_nll(model: &NeuralModel, data: &Dataset) -> Result<f64> {
    let (x, y) = tensors(data)?;
    let lp = model.log_density_standardized(&x, &y)?;
    Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
}

fn optimizer_step(
    model: &mut NeuralModel,
    adam: &mut Adam,
    config: &TrainerConfig,
    mut grads: Vec<Tensor>,
) -> Result<()> {
    config.regularizer.add_gradient(model.parameters(), &mut grads);
    config.regularizer.decay(model.parameters_mut(), config.learning_rate);
    adam.step(model.parameters_mut(), &grads)
}

/// Minibatch Adam on the noise-perturbed negative log-likelihood. Every
/// epoch reshuffles the data and every batch receives fresh noise.
pub fn train(model: &mut NeuralModel, data: &Dataset, config: &TrainerConfig) -> Result<TrainReport> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(CdeError::invalid(format!(
            "dataset of {} rows is smaller than the batch size {}",
            data.len(),
            config.batch_size
        )));
    }
    let std_data = prepare(model, data, config.seed)?;
    let d = data.x_dim() + data.y_dim();
    let (h_x, h_y) = bandwidth(
        &config.schedule,
        data.len(),
        d,
        &vec![1.0; data.x_dim()],
        &vec![1.0; data.y_dim()],
    )?;
    let (h_x, h_y) = masked(h_x, h_y, config.noise_on);
    let h_used = h_summary(&h_x, &h_y);

    let initial_nll = full_nll(model, &std_data)?;
    let mut adam = Adam::new(config.adam(), model.parameters())?;
    let mut shuffle_rng = stream(config.seed, SHUFFLE_STREAM);
    let mut noise_rng = stream(config.seed, NOISE_STREAM);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = permutation(std_data.len(), &mut shuffle_rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let mut batch = std_data.subset(idx);
            perturb_batch(&mut batch, &h_x, &h_y, &mut noise_rng)?;
            let (x, y) = tensors(&batch)?;
            let (loss, grads) = model.nll_and_gradients(x, y)?;
            if !loss.is_finite() {
                return Err(CdeError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: loss,
                });
            }
            total += loss * idx.len() as f64;
            optimizer_step(model, &mut adam, config, grads)?;
        }
        trace.push(EpochRecord {
            epoch,
            train_nll: total / std_data.len() as f64,
            h_used,
        });
    }
    Ok(TrainReport {
        initial_nll,
        trace,
        h_x,
        h_y,
    })
}

/// `r` draws from the kernel-smoothed empirical distribution: rows picked
/// uniformly with replacement, then perturbed by `h ξ`.
pub fn augment(data: &Dataset, h_x: &[f64], h_y: &[f64], r: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
    if data.is_empty() {
        return Err(CdeError::Empty("data to augment"));
    }
    let idx: Vec<usize> = (0..r).map(|_| rng.random_range(0..data.len())).collect();
    let mut out = data.subset(&idx);
    perturb_batch(&mut out, h_x, h_y, rng)?;
    Ok(out)
}

/// Rows processed per tape in full-batch gradient evaluation.
const GENERIC_CHUNK: usize = 4096;

/// Noise-regularized MLE by explicit augmentation: materialize `r` noisy
/// resamples of the standardized data once, then run `config.epochs`
/// full-batch Adam steps on them. `h` is the intensity on the standardized
/// scale, applied to the variables selected by `config.noise_on`; the
/// configured schedule is ignored.
pub fn generic_noise_mle(
    model: &mut NeuralModel,
    data: &Dataset,
    h: f64,
    r: usize,
    config: &TrainerConfig,
    rng: &mut dyn RngCore,
) -> Result<TrainReport> {
    config.validate()?;
    if r == 0 {
        return Err(CdeError::invalid("r must be at least 1"));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(CdeError::invalid(format!("noise intensity must be >= 0, got {h}")));
    }
    let std_data = prepare(model, data, config.seed)?;
    let (h_x, h_y) = masked(vec![h; data.x_dim()], vec![h; data.y_dim()], config.noise_on);
    let h_used = h_summary(&h_x, &h_y);
    let augmented = augment(&std_data, &h_x, &h_y, r, rng)?;
    let initial_nll = full_nll(model, &std_data)?;
    let mut adam = Adam::new(config.adam(), model.parameters())?;
    let mut trace = Vec::with_capacity(config.epochs);
    let all: Vec<usize> = (0..augmented.len()).collect();
    for epoch in 0..config.epochs {
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor>> = None;
        for (b, idx) in all.chunks(GENERIC_CHUNK).enumerate() {
            let (x, y) = tensors(&augmented.subset(idx))?;
            let (l, g) = model.nll_and_gradients(x, y)?;
            if !l.is_finite() {
                return Err(CdeError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: l,
                });
            }
            let w = idx.len() as f64 / r as f64;
            loss += w * l;
            match grads.as_mut() {
                None => {
                    grads = Some(
                        g.into_iter()
                            .map(|mut t| {
                                t.data_mut().iter_mut().for_each(|v| *v *= w);
                                t
                            })
                            .collect(),
                    )
                }
                Some(acc) => {
                    for (a, t) in acc.iter_mut().zip(g) {
                        a.data_mut().iter_mut().zip(t.data()).for_each(|(a, v)| *a += w * v);
                    }
                }
            }
        }
        optimizer_step(model, &mut adam, config, grads.expect("r >= 1"))?;
        trace.push(EpochRecord {
            epoch,
            train_nll: loss,
            h_used,
        });
    }
    Ok(TrainReport {
        initial_nll,
        trace,
        h_x,
        h_y,
    })
}
