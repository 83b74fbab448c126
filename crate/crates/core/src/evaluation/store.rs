use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::experiment::ResultRecord;
use crate::error::{CdeError, Result};

/// Append-only JSON-lines file of [`ResultRecord`]s.
#[derive(Clone, Debug)]
pub struct ResultStore {
    path: PathBuf,
}

impl ResultStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ResultStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records already stored; a missing file reads as empty.
    pub fn records(&self) -> Result<Vec<ResultRecord>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        read_records(&self.path)
    }

    /// `(config_hash, seed)` pairs with a successful record.
    pub fn completed(&self) -> Result<BTreeSet<(String, u64)>> {
        Ok(self
            .records()?
            .into_iter()
            .filter(ResultRecord::succeeded)
            .map(|r| (r.config_hash, r.seed))
            .collect())
    }

    pub fn append(&self, record: &ResultRecord) -> Result<()> {
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(())
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Seed-aggregated scores of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub dataset: String,
    pub model: String,
    pub schedule: String,
    pub regularizer: String,
    pub lambda: f64,
    pub n_train: usize,
    pub n_seeds: usize,
    pub mean_test_ll: f64,
    pub std_test_ll: f64,
    pub mean_kl: Option<f64>,
}

/// One row per configuration over its successful records, ordered by
/// dataset, model, schedule, regularizer, λ, n_train.
pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.succeeded()) {
        groups.entry(r.config_hash.as_str()).or_default().push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|(hash, rs)| {
            let lls: Vec<f64> = rs.iter().filter_map(|r| r.test_log_likelihood).collect();
            let (mean, std) = mean_std(&lls);
            let kls: Vec<f64> = rs.iter().filter_map(|r| r.kl_to_truth).collect();
            let first = rs[0];
            SummaryRow {
                config_hash: hash.to_string(),
                dataset: first.dataset.clone(),
                model: first.model.clone(),
                schedule: first.schedule.clone(),
                regularizer: first.regularizer.clone(),
                lambda: first.lambda,
                n_train: first.n_train,
                n_seeds: lls.len(),
                mean_test_ll: mean,
                std_test_ll: std,
                mean_kl: (!kls.is_empty()).then(|| mean_std(&kls).0),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.dataset, &a.model, &a.schedule, &a.regularizer)
            .cmp(&(&b.dataset, &b.model, &b.schedule, &b.regularizer))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.n_train.cmp(&b.n_train))
            .then(a.config_hash.cmp(&b.config_hash))
    });
    rows
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Layout of a plot-data file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    /// Test log-likelihood against n_train, one series per model and schedule.
    Schedules,
    /// Test log-likelihood against n_train, one series per model and regularizer.
    Regularizers,
    /// Test log-likelihood per dataset, one series per method.
    Benchmark,
}

impl FromStr for Figure {
    type Err = CdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "schedules" => Ok(Figure::Schedules),
            "regularizers" => Ok(Figure::Regularizers),
            "benchmark" => Ok(Figure::Benchmark),
            other => Err(CdeError::invalid(format!(
                "unknown figure `{other}` (expected schedules, regularizers or benchmark)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotRow {
    pub x: String,
    pub series: String,
    pub y: f64,
    pub err: f64,
    pub n: usize,
}

fn regularizer_label(r: &ResultRecord) -> String {
    if r.regularizer == "none" {
        "none".to_string()
    } else {
        format!("{}({})", r.regularizer, r.lambda)
    }
}

/// Tidy rows `(x, series, mean, std)` aggregated over successful records,
/// sorted by series then x.
pub fn plot_rows(records: &[ResultRecord], figure: Figure) -> Result<Vec<PlotRow>> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.succeeded()) {
        let (x, series) = match figure {
            Figure::Schedules => (r.n_train.to_string(), format!("{}/{}", r.model, r.schedule)),
            Figure::Regularizers => (r.n_train.to_string(), format!("{}/{}", r.model, regularizer_label(r))),
            Figure::Benchmark => (
                r.dataset.clone(),
                format!("{}/{}/{}", r.model, r.schedule, regularizer_label(r)),
            ),
        };
        groups
            .entry((series, x))
            .or_default()
            .push(r.test_log_likelihood.expect("successful record"));
    }
    if groups.is_empty() {
        return Err(CdeError::Empty("successful result records"));
    }
    let mut rows: Vec<PlotRow> = groups
        .into_iter()
        .map(|((series, x), v)| {
            let (y, err) = mean_std(&v);
            PlotRow {
                x,
                series,
                y,
                err,
                n: v.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.series.cmp(&b.series).then_with(|| {
            match (a.x.parse::<f64>(), b.x.parse::<f64>()) {
                (Ok(p), Ok(q)) => p.total_cmp(&q),
                _ => a.x.cmp(&b.x),
            }
        })
    });
    Ok(rows)
}

pub fn write_plot_csv<W: Write>(rows: &[PlotRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
