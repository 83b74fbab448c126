use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use cde_core::data::{column_stats, Dataset};
use cde_core::error::CdeError;
use cde_core::evaluation::{
    evaluate_with_error, experiment_data, fit_model, plot_rows, read_records, run_experiments,
    summarize, write_plot_csv, write_summary_csv, BenchmarkConfig, ExperimentConfig, Figure,
    ResultStore, DATA_STREAM,
};
use cde_core::models::FittedModel;
use cde_core::rng::stream;
use cde_core::simulation::{GmmConfig, GmmSim, Simulator, SkewNormalSim};

const SEED_ENV: &str = "CDE_SEED";

#[derive(Parser)]
#[command(name = "cde", version, about = "Conditional density estimation with noise regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Skew,
    Gmm,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a simulator and write it as CSV.
    Simulate {
        #[arg(long, value_enum)]
        sim: SimKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model from an experiment config and save it as JSON.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the held-out rows of the split.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Score a saved model on a CSV dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a benchmark sweep, appending JSON-lines records.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Summary CSV path; defaults to the results path with a `.summary.csv` suffix.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate benchmark records into a tidy CSV for plotting.
    Plotdata {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        figure: String,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<CdeError> for Failure {
    fn from(e: CdeError) -> Self {
        if e.is_numerical() {
            Failure::numerical(e.to_string())
        } else {
            Failure::usage(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { sim, n, seed, out } => simulate(sim, n, seed, &out),
        Command::Fit {
            config,
            out,
            test_out,
        } => fit(&config, &out, test_out.as_deref()),
        Command::Evaluate { model, data } => evaluate(&model, &data),
        Command::Benchmark {
            config,
            results,
            summary,
            jobs,
        } => benchmark(&config, &results, summary, jobs),
        Command::Plotdata {
            results,
            figure,
            out,
        } => plotdata(&results, &figure, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        Failure::usage(format!("config error at {at}: {}", e.into_inner()))
    })
}

/// Seeds after applying the environment override: `base + i`.
fn effective_seeds(seeds: &[u64]) -> Result<Vec<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => {
            let base: u64 = raw
                .trim()
                .parse()
                .map_err(|_| Failure::usage(format!("{SEED_ENV} must be an unsigned integer, got {raw:?}")))?;
            Ok((0..seeds.len() as u64).map(|i| base + i).collect())
        }
        Err(_) => Ok(seeds.to_vec()),
    }
}

fn simulate(kind: SimKind, n: usize, seed: u64, out: &Path) -> CmdResult {
    if n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    let sim: Box<dyn Simulator> = match kind {
        SimKind::Skew => Box::new(SkewNormalSim::default()),
        SimKind::Gmm => Box::new(GmmSim::random(&GmmConfig::default())?),
    };
    let data = sim.sample(n, &mut stream(seed, DATA_STREAM))?;
    data.to_csv_path(out)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", out.display())))?;
    println!("wrote {} rows to {}", data.len(), out.display());
    let (xm, xs) = column_stats(data.x(), data.x_dim());
    let (ym, ys) = column_stats(data.y(), data.y_dim());
    let names = data.header();
    for (name, (m, s)) in names.iter().zip(xm.iter().chain(&ym).zip(xs.iter().chain(&ys))) {
        println!("{name}: mean {m:.4} std {s:.4}");
    }
    Ok(())
}

fn fit(config_path: &Path, out: &Path, test_out: Option<&Path>) -> CmdResult {
    let mut config: ExperimentConfig = read_config(config_path)?;
    config.seeds = effective_seeds(&config.seeds)?;
    let seed = *config
        .seeds
        .first()
        .ok_or_else(|| Failure::usage("config error at seeds: at least one seed is required"))?;
    let (train, test) = experiment_data(&config, seed)?;
    let (model, report) = fit_model(&config.model, &train, &config.trainer, seed)?;
    let json = model.to_json()?;
    fs::write(out, json).map_err(|e| Failure::usage(format!("cannot write {}: {e}", out.display())))?;
    if let Some(path) = test_out {
        test.to_csv_path(path)
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(r) = &report {
        let nll = r.final_nll();
        println!("final_train_nll {nll}");
        if !nll.is_finite() {
            return Err(Failure::numerical(format!("final training loss is {nll}")));
        }
    }
    let score = evaluate_with_error(&model, &test)?;
    println!("test_log_likelihood {} (std error {})", score.mean, score.std_error);
    println!("model written to {}", out.display());
    Ok(())
}

fn evaluate(model_path: &Path, data_path: &Path) -> CmdResult {
    let text = fs::read_to_string(model_path)
        .map_err(|e| Failure::usage(format!("cannot read model {}: {e}", model_path.display())))?;
    let model = FittedModel::from_json(&text)?;
    let data = Dataset::from_csv_path(data_path)?;
    let score = evaluate_with_error(&model, &data)?;
    println!("test_log_likelihood {} (std error {})", score.mean, score.std_error);
    Ok(())
}

fn summary_path(results: &Path) -> PathBuf {
    let mut name = results.file_stem().unwrap_or_default().to_os_string();
    name.push(".summary.csv");
    results.with_file_name(name)
}

fn benchmark(config_path: &Path, results: &Path, summary: Option<PathBuf>, jobs: usize) -> CmdResult {
    let mut bench: BenchmarkConfig = read_config(config_path)?;
    bench.seeds = effective_seeds(&bench.seeds)?;
    let configs = bench.expand()?;
    let store = ResultStore::new(results);
    let done = store.completed()?;
    let mut pending = Vec::new();
    for c in &configs {
        let hash = c.config_hash();
        for &seed in &c.seeds {
            if !done.contains(&(hash.clone(), seed)) {
                pending.push((c.clone(), seed));
            }
        }
    }
    let skipped = configs.iter().map(|c| c.seeds.len()).sum::<usize>() - pending.len();
    eprintln!(
        "{} experiments, {} runs pending, {} already complete",
        configs.len(),
        pending.len(),
        skipped
    );
    let mut write_error = None;
    let records = run_experiments(&pending, jobs, |rec| {
        if let Some(err) = &rec.error {
            eprintln!("seed {} of {} failed: {err}", rec.seed, rec.config_hash);
        }
        if write_error.is_none() {
            if let Err(e) = store.append(rec) {
                write_error = Some(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(Failure::usage(format!("cannot append to {}: {e}", results.display())));
    }
    let succeeded = records.iter().filter(|r| r.succeeded()).count();
    println!("{} records written, {} succeeded", records.len(), succeeded);
    let all = store.records()?;
    let rows = summarize(&all);
    let summary = summary.unwrap_or_else(|| summary_path(results));
    let file = fs::File::create(&summary)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", summary.display())))?;
    write_summary_csv(&rows, file)?;
    println!("summary written to {} ({} rows)", summary.display(), rows.len());
    if !pending.is_empty() && succeeded == 0 {
        return Err(Failure::numerical("every run failed; no usable records were written"));
    }
    Ok(())
}

fn plotdata(results: &Path, figure: &str, out: &Path) -> CmdResult {
    let figure: Figure = figure.parse()?;
    let records = read_records(results)?;
    let rows = plot_rows(&records, figure)?;
    let mut buf = Vec::new();
    write_plot_csv(&rows, &mut buf)?;
    fs::File::create(out)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", out.display())))?;
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}
