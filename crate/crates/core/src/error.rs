use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("non-numeric cell at row {row}, column '{column}': {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("outcome column {0} not found")]
    MissingOutcome(String),

    #[error("too few observations: n = {n}, at least {min} required")]
    TooFewRows { n: usize, min: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("column '{0}' has zero standard deviation")]
    ConstantColumn(String),

    #[error("dataset must be standardized before this operation")]
    NotStandardized,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "least squares needs n > rank + 1 (n = {n}, rank = {rank}); use the ridge spectral weight instead"
    )]
    LeastSquaresUnavailable { n: usize, rank: usize },

    #[error(
        "empirical correlation needs n > p (n = {n}, p = {p}); use the ridge spectral weight on the raw covariates instead"
    )]
    CorrelationUnavailable { n: usize, p: usize },

    #[error("expanded covariate count {p} exceeds the cap of {cap}")]
    TooManyColumns { p: usize, cap: usize },

    #[error("degenerate design: weighted spectrum indistinguishable from identity")]
    DegenerateDesign,

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("quadrature did not reach tolerance {tol:e} (error estimate {estimate:e})")]
    Quadrature { tol: f64, estimate: f64 },

    #[error("correlation matrix could not be repaired to PSD after {0} attempts")]
    CorrelationRepair(usize),

    #[error("scenario config: {0}")]
    Config(String),

    #[error("{failures} of {replicates} replicates failed (limit 5%)")]
    TooManyFailures { failures: usize, replicates: usize },
}

impl Error {
    /// True for failures of numerical routines as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDesign
                | Error::Eigen(_)
                | Error::Quadrature { .. }
                | Error::CorrelationRepair(_)
                | Error::TooManyFailures { .. }
        )
    }
}
