use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{evaluate_with_error, grid_search_cv, kl_to_truth, CvGrid};
use crate::data::{train_test_split, Dataset};
use crate::error::{CdeError, Result};
use crate::models::{FittedModel, ModelSpec, NeuralModel};
use crate::nonparametric::{CkdeModel, NkdeModel};
use crate::rng::stream;
use crate::simulation::{Simulator, SimulatorSpec};
use crate::trainer::{NoiseSchedule, Regularizer, TrainReport, TrainerConfig};

/// Stream offsets added to each experiment seed.
pub const DATA_STREAM: u64 = 4 << 32;
pub const TEST_STREAM: u64 = 5 << 32;
pub const SPLIT_STREAM: u64 = 6 << 32;
pub const INIT_STREAM: u64 = 7 << 32;
pub const CV_STREAM: u64 = 8 << 32;
pub const KL_STREAM: u64 = 9 << 32;

const CV_FOLDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Simulator(SimulatorSpec),
    Csv { path: PathBuf },
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::Simulator(s) => s.label().to_string(),
            DataSource::Csv { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        }
    }
}

fn default_test_fraction() -> f64 {
    0.2
}

/// One model on one data source, repeated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model: ModelSpec,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Training rows. Required for simulators; for CSV data it caps the
    /// training part of the split.
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Simulated test rows; defaults to the size implied by `test_fraction`.
    #[serde(default)]
    pub n_test: Option<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub cv_grid: Option<CvGrid>,
    /// Monte-Carlo draws for the KL-to-truth estimate (simulators only, 0 = skip).
    #[serde(default)]
    pub kl_samples: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CdeError::config("seeds", "at least one seed is required"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CdeError::config(
                "test_fraction",
                format!("must lie in (0, 1), got {}", self.test_fraction),
            ));
        }
        if matches!(self.data, DataSource::Simulator(_)) && !self.n_train.is_some_and(|n| n > 0) {
            return Err(CdeError::config("n_train", "simulated data needs n_train >= 1"));
        }
        if self.n_test == Some(0) {
            return Err(CdeError::config("n_test", "must be at least 1"));
        }
        self.trainer
            .validate()
            .map_err(|e| CdeError::config("trainer", e.to_string()))
    }

    /// Hex prefix of the SHA-256 of the canonical JSON without the seeds.
    pub fn config_hash(&self) -> String {
        let mut bare = self.clone();
        bare.seeds.clear();
        let value = serde_json::to_value(&bare).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    fn simulated_test_size(&self, n_train: usize) -> usize {
        self.n_test.unwrap_or_else(|| {
            let n = (n_train as f64 * self.test_fraction / (1.0 - self.test_fraction)).round();
            (n as usize).max(1)
        })
    }
}

/// One seed of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub model: String,
    pub schedule: String,
    pub regularizer: String,
    pub lambda: f64,
    pub n_train: usize,
    pub test_log_likelihood: Option<f64>,
    pub test_ll_std_error: Option<f64>,
    pub kl_to_truth: Option<f64>,
    pub kl_std_error: Option<f64>,
    pub final_train_nll: Option<f64>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl ResultRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.test_log_likelihood.is_some()
    }
}

/// Fits the model described by `spec` on `data`. Neural models are
/// initialized from the seed's init stream and trained with `trainer`.
pub fn fit_model(
    spec: &ModelSpec,
    data: &Dataset,
    trainer: &TrainerConfig,
    seed: u64,
) -> Result<(FittedModel, Option<TrainReport>)> {
    match spec {
        ModelSpec::Ckde { bandwidth } => Ok((FittedModel::Ckde(CkdeModel::fit(data, *bandwidth)?), None)),
        ModelSpec::Nkde { epsilon } => Ok((FittedModel::Nkde(NkdeModel::fit(data, *epsilon)?), None)),
        _ => {
            let mut model =
                NeuralModel::new(spec, data.x_dim(), data.y_dim(), &mut stream(seed, INIT_STREAM))?;
            let config = TrainerConfig {
                seed,
                ..trainer.clone()
            };
            let report = model.fit(data, &config)?;
            Ok((FittedModel::Neural(model), Some(report)))
        }
    }
}

struct Split {
    train: Dataset,
    test: Dataset,
    truth: Option<Box<dyn Simulator>>,
}

fn load_split(config: &ExperimentConfig, seed: u64) -> Result<Split> {
    match &config.data {
        DataSource::Simulator(spec) => {
            let sim = spec.build()?;
            let n_train = config.n_train.unwrap_or(0);
            let train = sim.sample(n_train, &mut stream(seed, DATA_STREAM))?;
            let n_test = config.simulated_test_size(n_train);
            let test = sim.sample(n_test, &mut stream(seed, TEST_STREAM))?;
            Ok(Split {
                train,
                test,
                truth: Some(sim),
            })
        }
        DataSource::Csv { path } => {
            let data = Dataset::from_csv_path(path)?;
            let (mut train_idx, test_idx) =
                train_test_split(data.len(), config.test_fraction, &mut stream(seed, SPLIT_STREAM))?;
            if let Some(n) = config.n_train {
                if n > train_idx.len() {
                    return Err(CdeError::invalid(format!(
                        "n_train={n} exceeds the {} training rows available",
                        train_idx.len()
                    )));
                }
                train_idx.truncate(n);
            }
            Ok(Split {
                train: data.subset(&train_idx),
                test: data.subset(&test_idx),
                truth: None,
            })
        }
    }
}

/// Train and test sets for one seed of `config`, drawn exactly as
/// `run_experiment` draws them.
pub fn experiment_data(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let split = load_split(config, seed)?;
    Ok((split.train, split.test))
}

struct SeedOutcome {
    test: super::Estimate,
    kl: Option<super::Estimate>,
    final_nll: Option<f64>,
    n_train: usize,
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let split = load_split(config, seed)?;
    let trainer = match (&config.cv_grid, config.model.is_neural()) {
        (Some(grid), true) => {
            grid_search_cv(&config.model, &config.trainer, grid, &split.train, CV_FOLDS, seed)?.best
        }
        _ => config.trainer.clone(),
    };
    let (model, report) = fit_model(&config.model, &split.train, &trainer, seed)?;
    let test = evaluate_with_error(&model, &split.test)?;
    let kl = match (&split.truth, config.kl_samples) {
        (Some(sim), n) if n > 0 => {
            Some(kl_to_truth(&model, sim.as_ref(), n, &mut stream(seed, KL_STREAM))?)
        }
        _ => None,
    };
    Ok(SeedOutcome {
        test,
        kl,
        final_nll: report.map(|r| r.final_nll()),
        n_train: split.train.len(),
    })
}

fn record(config: &ExperimentConfig, hash: &str, seed: u64) -> ResultRecord {
    let start = Instant::now();
    let outcome = run_seed(config, seed);
    let neural = config.model.is_neural();
    let mut rec = ResultRecord {
        config_hash: hash.to_string(),
        seed,
        dataset: config.data.label(),
        model: config.model.label().to_string(),
        schedule: if neural { config.trainer.schedule.label() } else { "none" }.to_string(),
        regularizer: if neural { config.trainer.regularizer.label() } else { "none" }.to_string(),
        lambda: if neural { config.trainer.regularizer.lambda() } else { 0.0 },
        n_train: config.n_train.unwrap_or(0),
        test_log_likelihood: None,
        test_ll_std_error: None,
        kl_to_truth: None,
        kl_std_error: None,
        final_train_nll: None,
        error: None,
        wall_time_s: 0.0,
    };
    match outcome {
        Ok(o) => {
            rec.n_train = o.n_train;
            rec.test_log_likelihood = Some(o.test.mean);
            rec.test_ll_std_error = Some(o.test.std_error);
            rec.kl_to_truth = o.kl.map(|k| k.mean);
            rec.kl_std_error = o.kl.map(|k| k.std_error);
            rec.final_train_nll = o.final_nll;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec.wall_time_s = start.elapsed().as_secs_f64();
    rec
}

/// Runs every seed of one experiment sequentially. Seed failures are
/// recorded, not propagated.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    let hash = config.config_hash();
    Ok(config.seeds.iter().map(|&s| record(config, &hash, s)).collect())
}

/// Runs the `(config, seed)` jobs on up to `jobs` threads. Records come
/// back in job order regardless of scheduling.
pub fn run_experiments(
    jobs: &[(ExperimentConfig, u64)],
    threads: usize,
    mut on_record: impl FnMut(&ResultRecord),
) -> Result<Vec<ResultRecord>> {
    for (c, _) in jobs {
        c.validate()?;
    }
    let hashes: Vec<String> = jobs.iter().map(|(c, _)| c.config_hash()).collect();
    let threads = threads.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ResultRecord>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (config, seed) = &jobs[i];
                let rec = record(config, &hashes[i], *seed);
                slots.lock().expect("result slots")[i] = Some(rec);
            });
        }
    });
    let records: Vec<ResultRecord> = slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();
    records.iter().for_each(&mut on_record);
    Ok(records)
}

/// A sweep over datasets, models, schedules, regularizers and sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub datasets: Vec<DataSource>,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub schedules: Vec<NoiseSchedule>,
    #[serde(default)]
    pub regularizers: Vec<Regularizer>,
    /// Training sizes; may be empty when every dataset is a CSV file.
    #[serde(default)]
    pub n_train: Vec<usize>,
    #[serde(default)]
    pub trainer: TrainerConfig,
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default)]
    pub cv_grid: Option<CvGrid>,
    #[serde(default)]
    pub kl_samples: usize,
}

impl BenchmarkConfig {
    /// Cartesian product of the sweep axes. Kernel baselines ignore the
    /// trainer axes, so their duplicates collapse into one experiment.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        for (path, empty) in [
            ("datasets", self.datasets.is_empty()),
            ("models", self.models.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(CdeError::config(path, "must list at least one entry"));
            }
        }
        let sizes: Vec<Option<usize>> = if self.n_train.is_empty() {
            vec![None]
        } else {
            self.n_train.iter().map(|n| Some(*n)).collect()
        };
        let schedules = if self.schedules.is_empty() {
            vec![self.trainer.schedule.clone()]
        } else {
            self.schedules.clone()
        };
        let regularizers = if self.regularizers.is_empty() {
            vec![self.trainer.regularizer.clone()]
        } else {
            self.regularizers.clone()
        };
        let mut out: Vec<ExperimentConfig> = Vec::new();
        for data in &self.datasets {
            for model in &self.models {
                for reg in &regularizers {
                    for sched in &schedules {
                        for n in &sizes {
                            let trainer = if model.is_neural() {
                                TrainerConfig {
                                    schedule: sched.clone(),
                                    regularizer: reg.clone(),
                                    ..self.trainer.clone()
                                }
                            } else {
                                TrainerConfig::default()
                            };
                            let config = ExperimentConfig {
                                data: data.clone(),
                                model: model.clone(),
                                trainer,
                                n_train: *n,
                                test_fraction: self.test_fraction,
                                n_test: self.n_test,
                                seeds: self.seeds.clone(),
                                cv_grid: if model.is_neural() { self.cv_grid.clone() } else { None },
                                kl_samples: self.kl_samples,
                            };
                            config.validate()?;
                            if !out.contains(&config) {
                                out.push(config);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
