//! Scoring, cross-validation and the experiment harness.

mod experiment;
mod store;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CdeError, Result};
use crate::models::{CondDensityModel, ModelSpec};
use crate::rng::{permutation, stream};
use crate::simulation::Simulator;
use crate::trainer::{NoiseSchedule, Regularizer, TrainerConfig};

pub use experiment::{
    experiment_data, fit_model, run_experiment, run_experiments, BenchmarkConfig, DataSource, ExperimentConfig,
    ResultRecord, CV_STREAM, DATA_STREAM, INIT_STREAM, KL_STREAM, SPLIT_STREAM, TEST_STREAM,
};
pub use store::{
    plot_rows, read_records, summarize, write_plot_csv, write_summary_csv, Figure, PlotRow,
    ResultStore, SummaryRow,
};

/// A Monte-Carlo style mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(CdeError::Empty("values to average"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_error = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(Estimate { mean, std_error })
    }
}

/// Per-point test log-likelihoods, checked for finiteness.
pub fn test_log_likelihoods(model: &dyn CondDensityModel, test: &Dataset) -> Result<Vec<f64>> {
    if test.is_empty() {
        return Err(CdeError::Empty("test set"));
    }
    let values = model.cond_log_pdf_batch(test)?;
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(CdeError::NonFiniteDensity { index, value });
    }
    Ok(values)
}

/// Mean conditional log-density of the test pairs.
pub fn evaluate(model: &dyn CondDensityModel, test: &Dataset) -> Result<f64> {
    Ok(evaluate_with_error(model, test)?.mean)
}

pub fn evaluate_with_error(model: &dyn CondDensityModel, test: &Dataset) -> Result<Estimate> {
    Estimate::from_values(&test_log_likelihoods(model, test)?)
}

/// Monte-Carlo estimate of `E_x KL(p(y|x) || f(y|x))` from `n_mc` draws of
/// the simulator.
pub fn kl_to_truth(
    model: &dyn CondDensityModel,
    simulator: &dyn Simulator,
    n_mc: usize,
    rng: &mut dyn RngCore,
) -> Result<Estimate> {
    if n_mc == 0 {
        return Err(CdeError::invalid("n_mc must be at least 1"));
    }
    let sample = simulator.sample(n_mc, rng)?;
    let truth = simulator.cond_log_pdf_batch(&sample)?;
    let fitted = test_log_likelihoods(model, &sample)?;
    let diffs: Vec<f64> = truth.iter().zip(&fitted).map(|(t, f)| t - f).collect();
    Estimate::from_values(&diffs)
}

/// Seeded shuffle of `0..n` cut into `k` contiguous validation folds.
pub fn kfold_indices(n: usize, k: usize, rng: &mut dyn RngCore) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(CdeError::invalid(format!("cannot cut {n} rows into {k} folds")));
    }
    let perm = permutation(n, rng);
    Ok((0..k).map(|f| perm[f * n / k..(f + 1) * n / k].to_vec()).collect())
}

/// Hyperparameter candidates for cross-validation. Empty lists keep the
/// base trainer's setting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvGrid {
    #[serde(default)]
    pub regularizers: Vec<Regularizer>,
    #[serde(default)]
    pub schedules: Vec<NoiseSchedule>,
}

impl CvGrid {
    pub fn candidates(&self, base: &TrainerConfig) -> Vec<TrainerConfig> {
        let regs = if self.regularizers.is_empty() {
            vec![base.regularizer.clone()]
        } else {
            self.regularizers.clone()
        };
        let scheds = if self.schedules.is_empty() {
            vec![base.schedule.clone()]
        } else {
            self.schedules.clone()
        };
        let mut out = Vec::with_capacity(regs.len() * scheds.len());
        for r in &regs {
            for s in &scheds {
                out.push(TrainerConfig {
                    regularizer: r.clone(),
                    schedule: s.clone(),
                    ..base.clone()
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvOutcome {
    pub best: TrainerConfig,
    /// Mean validation log-likelihood per candidate (NaN when every fold failed).
    pub scores: Vec<(TrainerConfig, f64)>,
}

/// Regularization strength used to break ties: penalty weight first, then
/// noise intensity.
fn strength(config: &TrainerConfig, n: usize, d: usize) -> (f64, f64) {
    let h = config.schedule.unit_bandwidth(n.max(1), d.max(1)).unwrap_or(0.0);
    (config.regularizer.lambda(), h)
}

/// k-fold grid search over trainer candidates on `data`. Returns the
/// candidate with the highest mean validation log-likelihood; ties go to
/// the stronger regularization.
pub fn grid_search_cv(
    spec: &ModelSpec,
    base: &TrainerConfig,
    grid: &CvGrid,
    data: &Dataset,
    k_folds: usize,
    seed: u64,
) -> Result<CvOutcome> {
    let candidates = grid.candidates(base);
    if candidates.is_empty() {
        return Err(CdeError::Empty("CV grid"));
    }
    let folds = kfold_indices(data.len(), k_folds, &mut stream(seed, CV_STREAM))?;
    let d = data.x_dim() + data.y_dim();
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, usize)> = None;
    for (ci, cand) in candidates.iter().enumerate() {
        let mut fold_scores = Vec::with_capacity(k_folds);
        for (f, val_idx) in folds.iter().enumerate() {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            let train = data.subset(&train_idx);
            let val = data.subset(val_idx);
            let score = fit_model(spec, &train, cand, seed)
                .and_then(|(m, _)| evaluate(&m, &val))
                .unwrap_or(f64::NAN);
            fold_scores.push(score);
        }
        let mean = if fold_scores.iter().all(|s| s.is_finite()) {
            fold_scores.iter().sum::<f64>() / k_folds as f64
        } else {
            f64::NAN
        };
        scores.push((cand.clone(), mean));
        if mean.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some((s, bi)) => {
                mean > s
                    || (mean == s
                        && strength(cand, train_size(data.len(), k_folds), d)
                            > strength(&candidates[bi], train_size(data.len(), k_folds), d))
            }
        };
        if better {
            best = Some((mean, ci));
        }
    }
    match best {
        Some((_, bi)) => Ok(CvOutcome {
            best: candidates[bi].clone(),
            scores,
        }),
        None => Err(CdeError::invalid("every CV candidate failed to produce a finite score")),
    }
}

fn train_size(n: usize, k: usize) -> usize {
    n - n / k
}
