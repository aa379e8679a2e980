//! Datasets, standardization, decorrelation and the centered Gram spectrum.

use std::path::Path;

use faer::Mat;
use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{self, mean_sd, outer_gram, spectral_function, sym_eigen};

/// Smallest sample size accepted anywhere in the crate.
pub const MIN_ROWS: usize = 4;
/// Default cap on the covariate count after interaction expansion.
pub const DEFAULT_INTERACTION_CAP: usize = 20_000;
/// Default relative eigenvalue floor for correlation inverse square roots.
pub const DEFAULT_CORRELATION_FLOOR: f64 = 1e-6;

const MEAN_TOL: f64 = 1e-10;
const SD_TOL: f64 = 1e-8;

/// How the outcome column of a CSV file is identified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeColumn {
    Name(String),
    /// 0-based column index.
    Index(usize),
    /// Header name if one matches, otherwise a 0-based index.
    Auto(String),
}

impl OutcomeColumn {
    fn resolve(&self, headers: &[String]) -> Result<usize> {
        let by_name = |name: &str| headers.iter().position(|h| h == name);
        let found = match self {
            OutcomeColumn::Name(name) => by_name(name),
            OutcomeColumn::Index(i) => (*i < headers.len()).then_some(*i),
            OutcomeColumn::Auto(s) => by_name(s).or_else(|| {
                s.parse::<usize>().ok().filter(|i| *i < headers.len())
            }),
        };
        found.ok_or_else(|| Error::MissingOutcome(self.to_string()))
    }
}

impl std::fmt::Display for OutcomeColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutcomeColumn::Name(s) | OutcomeColumn::Auto(s) => write!(f, "'{s}'"),
            OutcomeColumn::Index(i) => write!(f, "#{i}"),
        }
    }
}

/// Outcome vector and `n × p` covariate matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    outcome: Vec<f64>,
    covariates: Mat<f64>,
    column_names: Option<Vec<String>>,
    standardized: bool,
}

impl Dataset {
    pub fn new(
        outcome: Vec<f64>,
        covariates: Mat<f64>,
        column_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = outcome.len();
        if n < MIN_ROWS {
            return Err(Error::TooFewRows { n, min: MIN_ROWS });
        }
        if covariates.nrows() != n {
            return Err(Error::Dimension(format!(
                "outcome has {n} rows but covariates have {}",
                covariates.nrows()
            )));
        }
        if covariates.ncols() == 0 {
            return Err(Error::Dimension("at least one covariate is required".into()));
        }
        if let Some(names) = &column_names {
            if names.len() != covariates.ncols() {
                return Err(Error::Dimension(format!(
                    "{} column names for {} covariates",
                    names.len(),
                    covariates.ncols()
                )));
            }
        }
        if outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome".into()));
        }
        linalg::check_finite(covariates.as_ref(), "covariates")?;
        Ok(Dataset {
            outcome,
            covariates,
            column_names,
            standardized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariates(&self) -> &Mat<f64> {
        &self.covariates
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn column_name(&self, j: usize) -> String {
        match &self.column_names {
            Some(names) => names[j].clone(),
            None => format!("x{}", j + 1),
        }
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Same covariates with a different outcome vector.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n() {
            return Err(Error::Dimension(format!(
                "replacement outcome has {} rows, expected {}",
                outcome.len(),
                self.n()
            )));
        }
        if outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome".into()));
        }
        Ok(Dataset { outcome, ..self.clone() })
    }

    /// Sample mean and variance (denominator `n - 1`) of the outcome.
    pub fn outcome_moments(&self) -> (f64, f64) {
        let (mean, sd) = mean_sd(self.outcome.iter().copied());
        (mean, sd * sd)
    }

    /// `(Y - Ȳ) / σ̂_Y` with the `n - 1` sample standard deviation.
    pub fn standardized_outcome(&self) -> Result<Vec<f64>> {
        let (mean, var) = self.outcome_moments();
        if !(var > 0.0) {
            return Err(Error::ConstantColumn("outcome".into()));
        }
        let sd = var.sqrt();
        Ok(self.outcome.iter().map(|y| (y - mean) / sd).collect())
    }

    /// Checks the standardization invariant column by column.
    pub fn check_standardized(&self) -> bool {
        (0..self.p()).all(|j| {
            let (mean, sd) = mean_sd(self.covariates.col_as_slice(j).iter().copied());
            mean.abs() <= MEAN_TOL && (sd - 1.0).abs() <= SD_TOL
        })
    }
}

/// Reads a delimited file with one header row. Every non-outcome column
/// becomes a covariate; empty, `NA` and `NaN` cells are rejected.
pub fn load_csv(path: impl AsRef<Path>, outcome: &OutcomeColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 2 {
        return Err(Error::Csv(format!(
            "need an outcome and at least one covariate column, found {} column(s)",
            headers.len()
        )));
    }
    let target = outcome.resolve(&headers)?;

    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let row_no = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Csv(format!(
                "row {row_no} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (c, cell) in record.iter().enumerate() {
            let value = parse_cell(cell).ok_or_else(|| Error::NonNumeric {
                row: row_no,
                column: headers[c].clone(),
                value: cell.to_string(),
            })?;
            if c == target {
                y.push(value);
            } else {
                row.push(value);
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if n < MIN_ROWS {
        return Err(Error::TooFewRows { n, min: MIN_ROWS });
    }
    let p = headers.len() - 1;
    let covariates = Mat::from_fn(n, p, |i, j| rows[i][j]);
    let names = headers
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != target)
        .map(|(_, h)| h.clone())
        .collect();
    Dataset::new(y, covariates, Some(names))
}

fn parse_cell(cell: &str) -> Option<f64> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return None;
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Centers each covariate and scales it to unit sample standard deviation
/// (denominator `n - 1`). The outcome is left untouched.
pub fn standardize(d: &Dataset) -> Result<Dataset> {
    let n = d.n();
    let p = d.p();
    let mut out = Mat::<f64>::zeros(n, p);
    for j in 0..p {
        let dst = out.col_as_slice_mut(j);
        dst.copy_from_slice(d.covariates.col_as_slice(j));
        if !standardize_in_place(dst) {
            return Err(Error::ConstantColumn(d.column_name(j)));
        }
    }
    Ok(Dataset {
        outcome: d.outcome.clone(),
        covariates: out,
        column_names: d.column_names.clone(),
        standardized: true,
    })
}

/// Centers and scales a column; false when it is numerically constant.
pub(crate) fn standardize_in_place(col: &mut [f64]) -> bool {
    let (mean, sd) = mean_sd(col.iter().copied());
    let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(sd > 64.0 * f64::EPSILON * scale) {
        return false;
    }
    col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    true
}

/// Natural log of every covariate; all entries must be strictly positive.
pub fn log_covariates(d: &Dataset) -> Result<Dataset> {
    for j in 0..d.p() {
        if d.covariates.col_as_slice(j).iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "column '{}' has non-positive values; cannot take logs",
                d.column_name(j)
            )));
        }
    }
    let covariates = Mat::from_fn(d.n(), d.p(), |i, j| d.covariates[(i, j)].ln());
    Dataset::new(d.outcome.clone(), covariates, d.column_names.clone())
}

/// Main effects plus all products of distinct covariate pairs, unstandardized.
/// Product columns are named `a:b`.
pub fn pairwise_products(d: &Dataset, cap: usize) -> Result<Dataset> {
    let p = d.p();
    let expanded = p + p * (p - 1) / 2;
    if expanded > cap {
        return Err(Error::TooManyColumns { p: expanded, cap });
    }
    let n = d.n();
    let mut out = Mat::<f64>::zeros(n, expanded);
    let mut names = Vec::with_capacity(expanded);
    for j in 0..p {
        out.col_as_slice_mut(j).copy_from_slice(d.covariates.col_as_slice(j));
        names.push(d.column_name(j));
    }
    let mut c = p;
    for j in 0..p {
        for k in (j + 1)..p {
            let (a, b) = (d.covariates.col_as_slice(j), d.covariates.col_as_slice(k));
            let dst = out.col_as_slice_mut(c);
            for i in 0..n {
                dst[i] = a[i] * b[i];
            }
            names.push(format!("{}:{}", d.column_name(j), d.column_name(k)));
            c += 1;
        }
    }
    Dataset::new(d.outcome.clone(), out, Some(names))
}

/// [`pairwise_products`] followed by [`standardize`].
pub fn expand_interactions(d: &Dataset, cap: usize) -> Result<Dataset> {
    standardize(&pairwise_products(d, cap)?)
}

/// Centered Gram matrix `M = Z̃Z̃ᵗ / p` and its full eigendecomposition.
#[derive(Debug, Clone)]
pub struct SpectralGram {
    m: Mat<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: Mat<f64>,
    rank: usize,
    ratio_xi: f64,
    p: usize,
    ones_coords: Vec<f64>,
}

impl SpectralGram {
    /// Factorizes an already-formed symmetric PSD Gram matrix built from `p`
    /// covariates.
    pub fn from_gram(m: Mat<f64>, p: usize) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::Dimension("Gram matrix must be square".into()));
        }
        if p == 0 {
            return Err(Error::Dimension("covariate count must be positive".into()));
        }
        let eig = sym_eigen(m.as_ref())?;
        let eigenvalues = clamp_spectrum(eig.values)?;
        let rank = numerical_rank(&eigenvalues, n, p);
        let ones = vec![1.0; n];
        let ones_coords = linalg::transpose_times(eig.vectors.as_ref(), &ones);
        Ok(SpectralGram {
            m,
            eigenvalues,
            eigenvectors: eig.vectors,
            rank,
            ratio_xi: n as f64 / p as f64,
            p,
            ones_coords,
        })
    }

    pub fn m(&self) -> &Mat<f64> {
        &self.m
    }

    /// Descending, clamped at zero.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column `k` pairs with `eigenvalues()[k]`.
    pub fn eigenvectors(&self) -> &Mat<f64> {
        &self.eigenvectors
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `n / p`.
    pub fn ratio_xi(&self) -> f64 {
        self.ratio_xi
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `Uᵗ 1`.
    pub fn ones_coords(&self) -> &[f64] {
        &self.ones_coords
    }

    /// `Uᵗ v` for a vector of length `n`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        linalg::transpose_times(self.eigenvectors.as_ref(), v)
    }

    /// Diagonal of `U diag(f(η)) Uᵗ`.
    pub fn spectral_diagonal(&self, weights: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut diag = vec![0.0; n];
        for (k, w) in weights.iter().enumerate() {
            let col = self.eigenvectors.col_as_slice(k);
            for (d, u) in diag.iter_mut().zip(col) {
                *d += u * u * w;
            }
        }
        diag
    }
}

fn clamp_spectrum(mut values: Vec<f64>) -> Result<Vec<f64>> {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = 1e-8 * top.max(1.0);
    for v in values.iter_mut() {
        if *v < -tol {
            return Err(Error::Eigen(format!(
                "Gram matrix is not positive semidefinite (eigenvalue {v:e})"
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(values)
}

/// Count of eigenvalues above `max(n, p) · ε · η_max`.
pub fn numerical_rank(eigenvalues: &[f64], n: usize, p: usize) -> usize {
    let top = eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = n.max(p) as f64 * f64::EPSILON * top;
    eigenvalues.iter().filter(|v| **v > tol).count()
}

fn centered_factor(d: &Dataset) -> Result<Mat<f64>> {
    if !d.is_standardized() {
        return Err(Error::NotStandardized);
    }
    let (n, p) = (d.n(), d.p());
    let mut z = d.covariates.clone();
    for j in 0..p {
        let col = z.col_as_slice_mut(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(z)
}

/// Builds `M = (1/p)(Z - 1z̄ᵗ)(Z - 1z̄ᵗ)ᵗ` for a standardized dataset and
/// factorizes it.
pub fn centered_gram(d: &Dataset) -> Result<SpectralGram> {
    let z = centered_factor(d)?;
    let m = outer_gram(z.as_ref(), d.p() as f64);
    SpectralGram::from_gram(m, d.p())
}

/// Eigenvalues of the centered Gram matrix only (descending, clamped), for
/// sizes where eigenvectors are not needed.
pub fn centered_gram_eigenvalues(d: &Dataset) -> Result<Vec<f64>> {
    let z = centered_factor(d)?;
    let m = outer_gram(z.as_ref(), d.p() as f64);
    clamp_spectrum(linalg::sym_eigenvalues(m.as_ref())?)
}

/// Correlation matrix together with a floored inverse square root.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    correlation: Mat<f64>,
    inverse_sqrt: Mat<f64>,
    eigenvalue_floor: f64,
    floored: usize,
}

impl CorrelationModel {
    /// `floor_rel` is relative to the largest eigenvalue.
    pub fn from_correlation(correlation: Mat<f64>, floor_rel: f64) -> Result<Self> {
        let p = correlation.nrows();
        if correlation.ncols() != p || p == 0 {
            return Err(Error::Dimension("correlation matrix must be square".into()));
        }
        if !(floor_rel > 0.0 && floor_rel < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eigenvalue floor must lie in (0, 1), got {floor_rel}"
            )));
        }
        for i in 0..p {
            if (correlation[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!(
                    "correlation diagonal entry {i} is {}",
                    correlation[(i, i)]
                )));
            }
            for j in 0..i {
                if (correlation[(i, j)] - correlation[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidParameter("correlation matrix is not symmetric".into()));
                }
            }
        }
        let eig = sym_eigen(correlation.as_ref())?;
        let floor = floor_rel * eig.values[0].max(f64::MIN_POSITIVE);
        let floored = eig.values.iter().filter(|v| **v < floor).count();
        if floored > 0 {
            warn!("correlation matrix is near singular: {floored} eigenvalue(s) raised to the floor {floor:e}");
        }
        let inverse_sqrt = spectral_function(&eig, |v| 1.0 / v.max(floor).sqrt());
        Ok(CorrelationModel {
            correlation,
            inverse_sqrt,
            eigenvalue_floor: floor,
            floored,
        })
    }

    pub fn correlation(&self) -> &Mat<f64> {
        &self.correlation
    }

    pub fn inverse_sqrt(&self) -> &Mat<f64> {
        &self.inverse_sqrt
    }

    /// Absolute floor applied to the eigenvalues.
    pub fn eigenvalue_floor(&self) -> f64 {
        self.eigenvalue_floor
    }

    /// Number of eigenvalues that were raised to the floor.
    pub fn floored(&self) -> usize {
        self.floored
    }

    pub fn p(&self) -> usize {
        self.correlation.nrows()
    }
}

/// Sample correlation of the covariates; requires `n > p`.
pub fn estimate_correlation(d: &Dataset, floor_rel: f64) -> Result<CorrelationModel> {
    let (n, p) = (d.n(), d.p());
    if n <= p {
        return Err(Error::CorrelationUnavailable { n, p });
    }
    let z = if d.is_standardized() {
        d.covariates.clone()
    } else {
        standardize(d)?.covariates
    };
    let prod = z.transpose() * &z;
    let denom = (n - 1) as f64;
    let r = Mat::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            0.5 * (prod[(i, j)] + prod[(j, i)]) / denom
        }
    });
    CorrelationModel::from_correlation(r, floor_rel)
}

/// Replaces the covariates by `X Σ^{-1/2}` (row convention) and
/// re-standardizes.
pub fn decorrelate(d: &Dataset, c: &CorrelationModel) -> Result<Dataset> {
    if c.p() != d.p() {
        return Err(Error::Dimension(format!(
            "correlation model is {}×{} but the dataset has {} covariates",
            c.p(),
            c.p(),
            d.p()
        )));
    }
    let transformed = &d.covariates * &c.inverse_sqrt;
    let out = Dataset::new(d.outcome.clone(), transformed, d.column_names.clone())?;
    standardize(&out)
}
