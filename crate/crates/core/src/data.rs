//! Seeded dataset generation for the six benchmark simulation schemes, an
//! exact Poisson sampler, CSV ingestion, and the train/test split.

use crate::error::{Error, Result};
use crate::seeding::hash_f64_u64;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;
use std::path::Path;

/// One of the six simulation schemes; covariates are uniform over
/// per-scheme bounds and the rate formula is strictly positive on the
/// support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimScheme {
    pub id: u32,
}

impl SimScheme {
    pub fn new(id: u32) -> Result<Self> {
        if (1..=6).contains(&id) {
            Ok(Self { id })
        } else {
            Err(Error::UnknownScheme(id))
        }
    }

    pub fn dim(&self) -> usize {
        match self.id {
            1 | 2 => 1,
            3 | 4 => 2,
            _ => 3,
        }
    }

    pub fn covariate_bounds(&self) -> Vec<(f64, f64)> {
        match self.id {
            1 | 2 => vec![(0.0, 1.0)],
            3 => vec![(0.0, 1.0), (0.0, 2.0)],
            4 => vec![(0.0, 1.0), (0.0, 1.0)],
            5 => vec![(0.0, 1.0), (1.0, 2.0), (0.0, 1.0)],
            _ => vec![(1.0, 4.0), (0.0, 1.0), (0.0, 0.2)],
        }
    }

    /// Expected count at a covariate point.
    pub fn rate(&self, x: &[f64]) -> f64 {
        match self.id {
            1 => x[0].exp(),
            2 => (1.0 + 1.5 * (x[0] + 0.2).exp()).exp(),
            3 => (1.0 + 1.2 * x[0].powf(0.5) + 0.25 * x[1].powf(0.25)).exp(),
            4 => (0.5 * (1.0 + 2.0 * x[0]).exp() / (1.0 + (x[1] + 1.0).exp())).exp(),
            5 => ((0.5 * x[0] * x[0] + x[1] * x[1]) / (1.0 + 0.2 * (x[2] + 0.2).exp())).exp(),
            _ => (1.0 + 1.25 * x[0].ln() + 0.5 * x[1] + 0.25 * x[2] * x[2]).exp(),
        }
    }
}

/// Where a dataset came from; carried into logs and bundles.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Provenance {
    Simulated { scheme: u32, seed: u64 },
    File { path: String, hash: u64 },
    Derived(String),
}

/// Covariate rows with non-negative integer targets and, for simulated
/// data, the generating rate per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub t: Vec<u64>,
    pub true_rate: Option<Vec<f64>>,
    pub covariate_names: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.t.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Stable content hash over covariates and targets.
    pub fn content_hash(&self) -> u64 {
        let flat = self.x.as_standard_layout();
        hash_f64_u64(flat.as_slice().expect("standard layout"), &self.t)
    }

    fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.t.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} covariate rows vs {} targets",
                self.x.nrows(),
                self.t.len()
            )));
        }
        if let Some(r) = &self.true_rate {
            if r.len() != self.t.len() {
                return Err(Error::ShapeMismatch("true_rate length mismatch".into()));
            }
            if r.iter().any(|&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain("true_rate must be positive".into()));
            }
        }
        if self.covariate_names.len() != self.x.ncols() {
            return Err(Error::ShapeMismatch("covariate name count mismatch".into()));
        }
        Ok(())
    }
}

/// Exact Poisson draw: Knuth's multiplication method for small rates,
/// Hormann's transformed rejection (PTRS) above 30 where the product of
/// uniforms would underflow.
pub fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::Domain(format!("rate must be positive and finite, got {lambda}")));
    }
    if lambda <= 30.0 {
        let limit = (-lambda).exp();
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= rng.random::<f64>();
            if p <= limit {
                return Ok(k);
            }
            k += 1;
        }
    }
    // PTRS constants from Hormann (1993).
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v = rng.random::<f64>();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return Ok(k as u64);
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= k * loglam - lambda - ln_gamma(k + 1.0)
        {
            return Ok(k as u64);
        }
    }
}

/// Generate `n` rows from a scheme: covariates uniform per bounds, rate by
/// formula, target Poisson at that rate. Fully determined by the seed.
pub fn simulate(scheme_id: u32, n: usize, seed: u64) -> Result<Dataset> {
    let scheme = SimScheme::new(scheme_id)?;
    if n < 1 {
        return Err(Error::InvalidInput("need at least one row".into()));
    }
    let d = scheme.dim();
    let bounds = scheme.covariate_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, d));
    let mut rates = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut row = vec![0.0; d];
    for r in 0..n {
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            row[i] = lo + rng.random::<f64>() * (hi - lo);
            x[(r, i)] = row[i];
        }
        let lam = scheme.rate(&row);
        t.push(poisson_draw(lam, &mut rng)?);
        rates.push(lam);
    }
    Ok(Dataset {
        x,
        t,
        true_rate: Some(rates),
        covariate_names: (1..=d).map(|i| format!("x{i}")).collect(),
        provenance: Provenance::Simulated { scheme: scheme_id, seed },
    })
}

pub const TARGET_COLUMN: &str = "target";
pub const TRUE_RATE_COLUMN: &str = "true_rate";

/// Load a dataset from CSV: the named target column must hold non-negative
/// integers; every other column (minus the optional true-rate column)
/// becomes a covariate in header order.
pub fn load_csv(
    path: impl AsRef<Path>,
    target_column: &str,
    true_rate_column: Option<&str>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::InvalidInput(format!("no column named '{target_column}'")))?;
    let rate_idx = match true_rate_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidInput(format!("no column named '{name}'")))?,
        ),
        None => None,
    };
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != target_idx && Some(i) != rate_idx)
        .collect();
    let covariate_names: Vec<String> = covariate_cols.iter().map(|&i| headers[i].clone()).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut t = Vec::new();
    let mut rates = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let field = |col: usize| -> Result<&str> {
            record.get(col).map(str::trim).ok_or_else(|| Error::Parse {
                row: row_idx,
                message: format!("missing column {col}"),
            })
        };
        let t_str = field(target_idx)?;
        let t_val: u64 = t_str.parse().map_err(|_| Error::Parse {
            row: row_idx,
            message: format!("target '{t_str}' is not a non-negative integer"),
        })?;
        t.push(t_val);
        if let Some(ri) = rate_idx {
            let s = field(ri)?;
            rates.push(s.parse::<f64>().map_err(|_| Error::Parse {
                row: row_idx,
                message: format!("true_rate '{s}' is not numeric"),
            })?);
        }
        let mut row = Vec::with_capacity(covariate_cols.len());
        for &c in &covariate_cols {
            let s = field(c)?;
            if s.is_empty() {
                return Err(Error::Parse {
                    row: row_idx,
                    message: format!("missing value in column '{}'", headers[c]),
                });
            }
            row.push(s.parse::<f64>().map_err(|_| Error::Parse {
                row: row_idx,
                message: format!("'{s}' in column '{}' is not numeric", headers[c]),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = covariate_cols.len();
    let mut x = Array2::zeros((rows.len(), d));
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            x[(r, c)] = v;
        }
    }
    let ds = Dataset {
        x,
        t,
        true_rate: if rate_idx.is_some() { Some(rates) } else { None },
        covariate_names,
        provenance: Provenance::File {
            path: path.display().to_string(),
            hash: 0,
        },
    };
    ds.validate()?;
    let hash = ds.content_hash();
    Ok(Dataset {
        provenance: Provenance::File {
            path: path.display().to_string(),
            hash,
        },
        ..ds
    })
}

/// Write a dataset as CSV: covariates in order, then `target`, then
/// `true_rate` when present. Floats are written with full round-trip
/// precision so reload is exact.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = ds.covariate_names.clone();
    header.push(TARGET_COLUMN.to_string());
    if ds.true_rate.is_some() {
        header.push(TRUE_RATE_COLUMN.to_string());
    }
    writer.write_record(&header)?;
    for r in 0..ds.n_rows() {
        let mut record: Vec<String> = (0..ds.n_covariates())
            .map(|c| format_float(ds.x[(r, c)]))
            .collect();
        record.push(ds.t[r].to_string());
        if let Some(rates) = &ds.true_rate {
            record.push(format_float(rates[r]));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Shortest representation that round-trips the f64 exactly.
pub(crate) fn format_float(v: f64) -> String {
    let mut buf = ryu_like(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // `{}` on f64 already prints the shortest round-trip form.
    format!("{v}")
}

/// Train fraction and seed for the split.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Seeded uniform permutation; the first `ceil(fraction * n)` permuted rows
/// become the training set, the rest the test set.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    ds.validate()?;
    let n = ds.n_rows();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two rows to split".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidInput("train fraction must lie in (0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((spec.train_fraction * n as f64).ceil() as usize).min(n - 1).max(1);
    let take = |rows: &[usize], label: &str| -> Dataset {
        let mut x = Array2::zeros((rows.len(), ds.n_covariates()));
        for (r, &i) in rows.iter().enumerate() {
            x.row_mut(r).assign(&ds.x.row(i));
        }
        Dataset {
            x,
            t: rows.iter().map(|&i| ds.t[i]).collect(),
            true_rate: ds
                .true_rate
                .as_ref()
                .map(|v| rows.iter().map(|&i| v[i]).collect()),
            covariate_names: ds.covariate_names.clone(),
            provenance: Provenance::Derived(format!("{label} split (seed {})", spec.seed)),
        }
    };
    Ok((take(&order[..n_train], "train"), take(&order[n_train..], "test")))
}

/// Per-covariate z-scoring fitted on training statistics only and applied
/// identically to any split. Zero-variance columns pass through unscaled.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let d = x.ncols();
        let mut means = vec![0.0; d];
        let mut sds = vec![0.0; d];
        for c in 0..d {
            let col = x.column(c);
            let mean = col.sum() / n;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means[c] = mean;
            sds[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { means, sds }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::ShapeMismatch("standardizer column mismatch".into()));
        }
        let mut out = x.clone();
        for c in 0..x.ncols() {
            for r in 0..x.nrows() {
                out[(r, c)] = (x[(r, c)] - self.means[c]) / self.sds[c];
            }
        }
        Ok(out)
    }
}
