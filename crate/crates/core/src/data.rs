//! Paired `(x, y)` samples, CSV I/O and standardization.

use std::io::{Read, Write};
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{CdeError, Result};
use crate::rng::permutation;

/// `n` paired samples stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x_dim: usize,
    y_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x_dim: usize, y_dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x_dim == 0 || y_dim == 0 {
            return Err(CdeError::invalid("x and y need at least one dimension"));
        }
        if x.len() % x_dim != 0 || y.len() % y_dim != 0 || x.len() / x_dim != y.len() / y_dim {
            return Err(CdeError::invalid(format!(
                "inconsistent dataset buffers: {} x-values (d_x={x_dim}), {} y-values (d_y={y_dim})",
                x.len(),
                y.len()
            )));
        }
        Ok(Dataset { x_dim, y_dim, x, y })
    }

    pub fn empty(x_dim: usize, y_dim: usize) -> Self {
        Dataset {
            x_dim,
            y_dim,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.x_dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Mutable views of the x and y buffers.
    pub fn columns_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.x, &mut self.y)
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.x_dim..(i + 1) * self.x_dim]
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        &self.y[i * self.y_dim..(i + 1) * self.y_dim]
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) -> Result<()> {
        crate::distributions::check_dim(self.x_dim, x)?;
        crate::distributions::check_dim(self.y_dim, y)?;
        self.x.extend_from_slice(x);
        self.y.extend_from_slice(y);
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::empty(self.x_dim, self.y_dim);
        out.x.reserve(indices.len() * self.x_dim);
        out.y.reserve(indices.len() * self.y_dim);
        for &i in indices {
            out.x.extend_from_slice(self.x_row(i));
            out.y.extend_from_slice(self.y_row(i));
        }
        out
    }

    /// Joint rows `z = (x, y)` flattened row-major with `x_dim + y_dim` columns.
    pub fn joint(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.len() * (self.x_dim + self.y_dim));
        for i in 0..self.len() {
            z.extend_from_slice(self.x_row(i));
            z.extend_from_slice(self.y_row(i));
        }
        z
    }

    pub fn header(&self) -> Vec<String> {
        (0..self.x_dim)
            .map(|j| format!("x{j}"))
            .chain((0..self.y_dim).map(|j| format!("y{j}")))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .x_row(i)
                .iter()
                .chain(self.y_row(i))
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a comma-separated file whose header names columns `x0.., y0..`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = r.headers()?.clone();
        let mut x_cols = Vec::new();
        let mut y_cols = Vec::new();
        for (col, name) in header.iter().enumerate() {
            let (kind, idx) = name.split_at(name.len().min(1));
            let idx: usize = idx
                .parse()
                .map_err(|_| CdeError::invalid(format!("unexpected CSV column `{name}`")))?;
            match kind {
                "x" => x_cols.push((idx, col)),
                "y" => y_cols.push((idx, col)),
                _ => return Err(CdeError::invalid(format!("unexpected CSV column `{name}`"))),
            }
        }
        for (cols, prefix) in [(&mut x_cols, "x"), (&mut y_cols, "y")] {
            cols.sort_unstable();
            if cols.is_empty() || cols.iter().enumerate().any(|(k, &(i, _))| k != i) {
                return Err(CdeError::invalid(format!(
                    "CSV header must contain contiguous columns {prefix}0..{prefix}{{d-1}}"
                )));
            }
        }
        let mut data = Dataset::empty(x_cols.len(), y_cols.len());
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let parse = |col: usize| -> Result<f64> {
                let field = record.get(col).unwrap_or("");
                field.parse::<f64>().map_err(|_| {
                    CdeError::invalid(format!("row {}: cannot parse `{field}` as a number", line + 1))
                })
            };
            let x = x_cols.iter().map(|&(_, c)| parse(c)).collect::<Result<Vec<_>>>()?;
            let y = y_cols.iter().map(|&(_, c)| parse(c)).collect::<Result<Vec<_>>>()?;
            data.push(&x, &y)?;
        }
        Ok(data)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Dataset::read_csv(std::io::BufReader::new(file))
    }
}

/// Per-column mean and standard deviation (population, `ddof = 0`).
pub fn column_stats(values: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = values.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in values.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in values.chunks_exact(dim) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
    (mean, std)
}

/// Affine map to zero mean and unit variance per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(x_dim: usize, y_dim: usize) -> Self {
        Standardizer {
            x_mean: vec![0.0; x_dim],
            x_std: vec![1.0; x_dim],
            y_mean: vec![0.0; y_dim],
            y_std: vec![1.0; y_dim],
        }
    }

    /// Constant columns keep a unit scale.
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(CdeError::Empty("dataset"));
        }
        let fix = |s: Vec<f64>| -> Vec<f64> {
            s.into_iter().map(|v| if v > 1e-12 { v } else { 1.0 }).collect()
        };
        let (x_mean, x_std) = column_stats(data.x(), data.x_dim());
        let (y_mean, y_std) = column_stats(data.y(), data.y_dim());
        Ok(Standardizer {
            x_mean,
            x_std: fix(x_std),
            y_mean,
            y_std: fix(y_std),
        })
    }

    pub fn transform_x(&self, x: &[f64]) -> Vec<f64> {
        apply(x, &self.x_mean, &self.x_std)
    }

    pub fn transform_y(&self, y: &[f64]) -> Vec<f64> {
        apply(y, &self.y_mean, &self.y_std)
    }

    pub fn inverse_y(&self, y: &[f64]) -> Vec<f64> {
        y.chunks_exact(self.y_mean.len())
            .flat_map(|r| {
                r.iter()
                    .zip(&self.y_mean)
                    .zip(&self.y_std)
                    .map(|((v, m), s)| v * s + m)
            })
            .collect()
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        Dataset {
            x_dim: data.x_dim,
            y_dim: data.y_dim,
            x: self.transform_x(&data.x),
            y: self.transform_y(&data.y),
        }
    }

    /// `-Σ ln σ_y`: add to a standardized-space log-density to express it in
    /// original units.
    pub fn log_jacobian(&self) -> f64 {
        -self.y_std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

fn apply(v: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    v.chunks_exact(mean.len())
        .flat_map(|r| r.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s))
        .collect()
}

/// Seeded shuffle, then the first `round(n * test_fraction)` indices form the
/// test part. Returns `(train, test)`.
pub fn train_test_split(
    n: usize,
    test_fraction: f64,
    rng: &mut dyn RngCore,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CdeError::invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(CdeError::invalid(format!(
            "cannot split {n} rows with test fraction {test_fraction}"
        )));
    }
    let perm = permutation(n, rng);
    let test = perm[..n_test].to_vec();
    let train = perm[n_test..].to_vec();
    Ok((train, test))
}
