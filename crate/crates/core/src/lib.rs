//! Estimation and inference for the proportion of outcome variation explained
//! by a high-dimensional set of covariates.
//!
//! The estimators are closed-form solutions of weighted estimating equations
//! built from the centered Gram matrix `M = (Z - 1z̄ᵗ)(Z - 1z̄ᵗ)ᵗ / p`. Two
//! weight families are provided: the spectral ridge weight
//! `W_λ = (I + λM)⁻¹ (M - I) (I + λM)⁻¹` for any `n`, `p`, and the
//! least-squares residual projector for `n > p + 1`. Variance estimates do not
//! rely on normal covariates or normal errors.
//!
//! Typical pipeline:
//!
//! ```no_run
//! use explvar::{data, estimator, variance};
//!
//! # fn main() -> explvar::Result<()> {
//! let raw = data::load_csv("data.csv", &data::OutcomeColumn::Name("y".into()))?;
//! let d = data::standardize(&raw)?;
//! let g = data::centered_gram(&d)?;
//! let est = estimator::iterate_lambda(&d, &g, 0.1, 5)?;
//! let v2 = variance::var_robust(&est, &g, &d.standardized_outcome()?, est.lambda_final)?;
//! let ci = variance::normal_interval(&est, v2, g.n(), 0.95, variance::VarianceMethod::Robust)?;
//! println!("r2 = {:.3} [{:.3}, {:.3}]", est.r2, ci.lower, ci.upper);
//! # Ok(())
//! # }
//! ```

pub mod data;
pub mod error;
pub mod estimator;
mod linalg;
pub mod quadrature;
pub mod simulation;
pub mod special;
pub mod variance;

pub use data::{CorrelationModel, Dataset, OutcomeColumn, SpectralGram};
pub use error::{Error, Result};
pub use estimator::{
    ExplainedVariationEstimate, LeastSquaresFit, WeightDiagnostics, WeightScheme,
};
pub use simulation::{ScenarioConfig, ScenarioReport};
pub use variance::{IntervalReport, MpLaw, VarianceMethod};

/// Dense matrix type used throughout the crate.
pub use faer::Mat;
