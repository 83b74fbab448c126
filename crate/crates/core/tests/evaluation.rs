mod common;

use std::collections::BTreeSet;

use cde_core::data::Dataset;
use cde_core::error::{CdeError, Result};
use cde_core::evaluation::{
    evaluate, evaluate_with_error, grid_search_cv, kfold_indices, kl_to_truth, plot_rows,
    run_experiment, summarize, write_summary_csv, BenchmarkConfig, CvGrid, DataSource,
    ExperimentConfig, Figure, ResultRecord, ResultStore,
};
use cde_core::models::{CondDensityModel, ModelSpec, NeuralModel};
use cde_core::nonparametric::BandwidthRule;
use cde_core::rng::seeded;
use cde_core::simulation::{GmmConfig, GmmSim, Simulator, SimulatorSpec, SkewNormalSim};
use cde_core::trainer::{NoiseSchedule, Regularizer, TrainerConfig};
use common::trapezoid;
use proptest::prelude::*;

struct Uniform {
    lo: f64,
    hi: f64,
}

impl CondDensityModel for Uniform {
    fn x_dim(&self) -> usize {
        1
    }
    fn y_dim(&self) -> usize {
        1
    }
    fn cond_log_pdf(&self, _x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(if (self.lo..=self.hi).contains(&y[0]) { -(self.hi - self.lo).ln() } else { f64::NEG_INFINITY })
    }
}

/// Truth shifted in y by a constant.
struct Shifted<'a> {
    sim: &'a SkewNormalSim,
    shift: f64,
}

impl CondDensityModel for Shifted<'_> {
    fn x_dim(&self) -> usize {
        1
    }
    fn y_dim(&self) -> usize {
        1
    }
    fn cond_log_pdf(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.sim.cond_log_pdf(x, &[y[0] - self.shift])
    }
}

#[test]
fn uniform_model_scores_log_reciprocal_volume() {
    let d = Dataset::new(1, 1, vec![0.0, 1.0, 2.0], vec![0.5, 3.9, 2.0]).unwrap();
    let ll = evaluate(&Uniform { lo: 0.0, hi: 4.0 }, &d).unwrap();
    assert!((ll + 4f64.ln()).abs() < 1e-15);
}

#[test]
fn empty_test_set_is_an_error() {
    assert!(evaluate(&Uniform { lo: 0.0, hi: 1.0 }, &Dataset::empty(1, 1)).is_err());
}

#[test]
fn non_finite_contribution_names_the_index() {
    let d = Dataset::new(1, 1, vec![0.0; 4], vec![0.5, 0.2, 0.3, 7.0]).unwrap();
    match evaluate(&Uniform { lo: 0.0, hi: 1.0 }, &d) {
        Err(CdeError::NonFiniteDensity { index, .. }) => assert_eq!(index, 3),
        other => panic!("expected a non-finite density error, got {other:?}"),
    }
}

#[test]
fn truth_scores_negative_conditional_entropy() {
    let sim = SkewNormalSim::default();
    let sample = sim.sample(100_000, &mut seeded(1)).unwrap();
    let ll = evaluate(&sim, &sample).unwrap();
    // -H(Y|X) = ∫ p(x) ∫ p(y|x) log p(y|x) dy dx by nested trapezoids
    let inner = |x: f64| {
        trapezoid(
            |y| {
                let lp = sim.cond_log_pdf(&[x], &[y]).unwrap();
                lp.exp() * lp
            },
            -40.0,
            40.0,
            8001,
        )
    };
    let px = |x: f64| (-0.5 * (x / 0.5).powi(2)).exp() / (0.5 * (2.0 * std::f64::consts::PI).sqrt());
    let oracle = trapezoid(|x| px(x) * inner(x), -4.0, 4.0, 401);
    assert!((ll - oracle).abs() < 0.01, "{ll} vs {oracle}");
}

#[test]
fn kl_of_truth_is_zero_within_error() {
    let sim = SkewNormalSim::default();
    let kl = kl_to_truth(&sim, &sim, 2000, &mut seeded(2)).unwrap();
    assert!(kl.mean.abs() <= 3.0 * kl.std_error.max(1e-300));
    let shifted = Shifted { sim: &sim, shift: 2.0 };
    let kl = kl_to_truth(&shifted, &sim, 2000, &mut seeded(3)).unwrap();
    assert!(kl.mean > 1.0, "{}", kl.mean);
}

#[test]
fn kl_decreases_with_more_training_data() {
    let sim = GmmSim::random(&GmmConfig::default()).unwrap();
    let trainer = TrainerConfig { epochs: 40, ..TrainerConfig::default() };
    let kl = |n: usize, seed: u64| {
        let data = sim.sample(n, &mut seeded(100 + seed)).unwrap();
        let mut m = NeuralModel::new(&ModelSpec::mdn(), 2, 2, &mut seeded(seed)).unwrap();
        m.fit(&data, &TrainerConfig { seed, ..trainer.clone() }).unwrap();
        kl_to_truth(&m, &sim, 2000, &mut seeded(200 + seed)).unwrap().mean
    };
    let (mut small, mut large) = (0.0, 0.0);
    for seed in 0..5 {
        small += kl(200, seed) / 5.0;
        large += kl(3000, seed) / 5.0;
    }
    assert!(large < small, "KL n=3000 {large} vs n=200 {small}");
}

#[test]
fn truth_upper_bounds_a_fitted_model() {
    let sim = SkewNormalSim::default();
    let train = sim.sample(300, &mut seeded(4)).unwrap();
    let test = sim.sample(10_000, &mut seeded(5)).unwrap();
    let mut m = NeuralModel::new(&ModelSpec::mdn(), 1, 1, &mut seeded(6)).unwrap();
    m.fit(&train, &TrainerConfig { epochs: 100, ..TrainerConfig::default() }).unwrap();
    let truth = evaluate_with_error(&sim, &test).unwrap();
    let fitted = evaluate(&m, &test).unwrap();
    assert!(truth.mean + 2.0 * truth.std_error >= fitted, "{truth:?} vs {fitted}");
}

proptest! {
    #[test]
    fn folds_partition_the_indices(n in 5usize..300, k in 2usize..6, seed in 0u64..1000) {
        prop_assume!(n >= k);
        let folds = kfold_indices(n, k, &mut seeded(seed)).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = BTreeSet::new();
        for f in &folds {
            prop_assert!(f.len() == n / k || f.len() == n / k + 1);
            for i in f {
                prop_assert!(seen.insert(*i));
            }
        }
        prop_assert_eq!(seen.len(), n);
    }
}

fn skew_source() -> DataSource {
    DataSource::Simulator(SimulatorSpec::SkewNormal(SkewNormalSim::default()))
}

#[test]
fn grid_search_single_candidate_and_extreme_shrinkage() {
    let data = SkewNormalSim::default().sample(200, &mut seeded(7)).unwrap();
    let spec = ModelSpec::Mdn { n_components: 3, hidden: vec![16] };
    let base = TrainerConfig { epochs: 30, ..TrainerConfig::default() };
    let single = grid_search_cv(&spec, &base, &CvGrid::default(), &data, 5, 1).unwrap();
    assert_eq!(single.best, base);
    let grid = CvGrid {
        regularizers: vec![Regularizer::L2 { lambda: 0.0 }, Regularizer::L2 { lambda: 1e6 }],
        schedules: vec![],
    };
    let out = grid_search_cv(&spec, &base, &grid, &data, 5, 1).unwrap();
    assert_eq!(out.best.regularizer, Regularizer::L2 { lambda: 0.0 });
    assert_eq!(out.scores.len(), 2);
}

#[test]
fn grid_search_fails_when_every_candidate_fails() {
    let data = SkewNormalSim::default().sample(20, &mut seeded(8)).unwrap();
    let base = TrainerConfig { epochs: 2, batch_size: 100, ..TrainerConfig::default() };
    assert!(grid_search_cv(&ModelSpec::mdn(), &base, &CvGrid::default(), &data, 5, 1).is_err());
}

fn small_experiment(seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        data: skew_source(),
        model: ModelSpec::Mdn { n_components: 3, hidden: vec![8] },
        trainer: TrainerConfig { epochs: 5, ..TrainerConfig::default() },
        n_train: Some(100),
        test_fraction: 0.2,
        n_test: None,
        seeds,
        cv_grid: None,
        kl_samples: 200,
    }
}

fn without_time(records: &[ResultRecord]) -> Vec<ResultRecord> {
    records.iter().cloned().map(|mut r| {
        r.wall_time_s = 0.0;
        r
    }).collect()
}

#[test]
fn experiments_are_deterministic_per_seed() {
    let config = small_experiment(vec![1, 2, 3, 4, 5]);
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    assert_eq!(a.len(), 5);
    assert_eq!(without_time(&a), without_time(&b));
    assert!(a.iter().all(|r| r.succeeded() && r.kl_to_truth.is_some()));
    assert_eq!(a[0].n_train, 100);
    let summary = summarize(&a);
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0].n_seeds, 5);
    let single = run_experiment(&small_experiment(vec![3])).unwrap();
    assert_eq!(without_time(&single)[0], without_time(&a)[2]);
}

#[test]
fn seed_failures_are_recorded() {
    let mut config = small_experiment(vec![1, 2]);
    config.n_train = Some(10);
    let recs = run_experiment(&config).unwrap();
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| !r.succeeded() && r.error.is_some()));
}

#[test]
fn invalid_experiments_are_rejected() {
    let mut c = small_experiment(vec![]);
    assert!(run_experiment(&c).is_err());
    c.seeds = vec![1];
    c.test_fraction = 1.0;
    assert!(run_experiment(&c).is_err());
}

#[test]
fn config_hash_ignores_seeds_only() {
    let a = small_experiment(vec![1, 2]);
    let b = small_experiment(vec![9]);
    assert_eq!(a.config_hash(), b.config_hash());
    assert_eq!(a.config_hash().len(), 16);
    let mut c = a.clone();
    c.n_train = Some(101);
    assert_ne!(a.config_hash(), c.config_hash());
}

#[test]
fn csv_source_splits_depend_only_on_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    SkewNormalSim::default().sample(150, &mut seeded(9)).unwrap().to_csv_path(&path).unwrap();
    let make = |model: ModelSpec| ExperimentConfig {
        data: DataSource::Csv { path: path.clone() },
        model,
        trainer: TrainerConfig { epochs: 2, ..TrainerConfig::default() },
        n_train: None,
        test_fraction: 0.2,
        n_test: None,
        seeds: vec![4],
        cv_grid: None,
        kl_samples: 100,
    };
    let kde = run_experiment(&make(ModelSpec::Ckde { bandwidth: BandwidthRule::RuleOfThumb })).unwrap();
    let nn = run_experiment(&make(ModelSpec::mdn())).unwrap();
    assert!(kde[0].succeeded() && nn[0].succeeded());
    assert_eq!(kde[0].n_train, 120);
    assert_eq!(nn[0].n_train, 120);
    assert_eq!(kde[0].dataset, "data");
    assert!(kde[0].kl_to_truth.is_none());
}

fn record(hash: &str, seed: u64, n: usize, schedule: &str, ll: f64) -> ResultRecord {
    ResultRecord {
        config_hash: hash.into(),
        seed,
        dataset: "skew_normal".into(),
        model: "mdn".into(),
        schedule: schedule.into(),
        regularizer: "none".into(),
        lambda: 0.0,
        n_train: n,
        test_log_likelihood: Some(ll),
        test_ll_std_error: Some(0.0),
        kl_to_truth: None,
        kl_std_error: None,
        final_train_nll: None,
        error: None,
        wall_time_s: 1.0,
    }
}

#[test]
fn plot_rows_aggregate_records() {
    let recs = vec![
        record("a", 1, 1000, "none", -1.0),
        record("a", 2, 1000, "none", -2.0),
        record("a", 3, 1000, "none", -3.0),
        record("b", 1, 200, "none", -5.0),
        record("c", 1, 200, "constant", -4.0),
    ];
    let rows = plot_rows(&recs, Figure::Schedules).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[0].series.as_str(), rows[0].x.as_str()), ("mdn/constant", "200"));
    assert_eq!((rows[1].series.as_str(), rows[1].x.as_str()), ("mdn/none", "200"));
    assert_eq!(rows[2].x, "1000");
    assert_eq!((rows[2].y, rows[2].err, rows[2].n), (-2.0, 1.0, 3));
    assert!(plot_rows(&[], Figure::Benchmark).is_err());
    assert!("figures".parse::<Figure>().is_err());
}

#[test]
fn summary_csv_and_store_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let store = ResultStore::new(dir.path().join("r.jsonl"));
    assert!(store.records().unwrap().is_empty());
    let mut failed = record("b", 2, 200, "none", 0.0);
    failed.test_log_likelihood = None;
    failed.error = Some("boom".into());
    let recs = vec![record("a", 1, 1000, "none", -1.0), record("a", 2, 1000, "none", -3.0), failed];
    for r in &recs {
        store.append(r).unwrap();
    }
    assert_eq!(store.records().unwrap(), recs);
    let done = store.completed().unwrap();
    assert_eq!(done.len(), 2);
    assert!(done.contains(&("a".to_string(), 1)));
    let mut buf = Vec::new();
    write_summary_csv(&summarize(&recs), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("config_hash,dataset,model,schedule,regularizer,lambda,n_train,n_seeds,mean_test_ll,std_test_ll"));
    assert!(lines[1].contains(",2,-2.0,1.41421356"), "{}", lines[1]);
}

#[test]
fn schedule_benchmark_expands_to_sixty_configurations() {
    let text = r#"{
        "datasets": [{"simulator": {"kind": "skew_normal"}}],
        "models": [{"kind": "mdn"}, {"kind": "kmn"}, {"kind": "nfn"}],
        "schedules": [{"kind": "rule_of_thumb"}, {"kind": "sqrt_decay"}, {"kind": "constant"}, {"kind": "none"}],
        "n_train": [200, 500, 1000, 2000, 5000],
        "seeds": [1, 2, 3, 4, 5]
    }"#;
    let bench: BenchmarkConfig = serde_json::from_str(text).unwrap();
    let configs = bench.expand().unwrap();
    assert_eq!(configs.len(), 60);
    let hashes: BTreeSet<String> = configs.iter().map(|c| c.config_hash()).collect();
    assert_eq!(hashes.len(), 60);
}

#[test]
fn kernel_baselines_ignore_trainer_axes() {
    let bench = BenchmarkConfig {
        datasets: vec![skew_source()],
        models: vec![ModelSpec::Nkde { epsilon: None }, ModelSpec::mdn()],
        schedules: vec![NoiseSchedule::None, NoiseSchedule::rule_of_thumb()],
        regularizers: vec![],
        n_train: vec![100],
        trainer: TrainerConfig::default(),
        seeds: vec![1],
        test_fraction: 0.2,
        n_test: None,
        cv_grid: None,
        kl_samples: 0,
    };
    assert_eq!(bench.expand().unwrap().len(), 3);
    let empty = BenchmarkConfig { models: vec![], ..bench };
    assert!(matches!(empty.expand(), Err(CdeError::Config { .. })));
}

#[test]
fn experiment_config_parsing() {
    let text = r#"{"data": {"simulator": {"kind": "gmm", "param_seed": 3}},
                   "model": {"kind": "kmn", "n_centers": 20},
                   "trainer": {"epochs": 10, "regularizer": {"kind": "l1", "lambda": 0.01}},
                   "n_train": 500, "seeds": [1]}"#;
    let c: ExperimentConfig = serde_json::from_str(text).unwrap();
    assert_eq!(c.test_fraction, 0.2);
    assert_eq!(
        c.model,
        ModelSpec::Kmn { n_centers: 20, init_scales: vec![0.3, 0.7], hidden: vec![32, 32] }
    );
    let bad = text.replace("\"n_centers\"", "\"centers\"");
    assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
    let bad = text.replace("\"seeds\"", "\"seed\"");
    assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
}
