//! Closed-form explained-variation estimators.
//!
//! With the standardized outcome `y` and the centering projector
//! `P_c = I - 11ᵗ/n`, the weighted estimating equation gives
//!
//! ```text
//! r̂² = tr[W (y yᵗ - P_c)] / tr[W (M - P_c)].
//! ```
//!
//! For the spectral weight `W_λ = (I + λM)⁻¹ (M - I) (I + λM)⁻¹` every trace is
//! a sum over the eigenpairs of `M`, so `W_λ` is never formed. The
//! least-squares weight is the residual projector of `[1, X]`.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SpectralGram};
use crate::error::{Error, Result};
use crate::linalg;

/// Upper clamp applied to `r̂²` before the `λ = r̂² / (1 - r̂²)` update.
pub const LAMBDA_UPDATE_CAP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightScheme {
    /// `W_λ`, optionally refined by `iterations` fixed-point updates of `λ`.
    RidgeSpectral { lambda: f64, iterations: usize },
    /// Residual projector of the intercept-augmented design.
    LeastSquares,
}

impl WeightScheme {
    /// Starting value and iteration count used in the reference simulations.
    pub const DEFAULT_RIDGE: WeightScheme = WeightScheme::RidgeSpectral {
        lambda: 0.1,
        iterations: 5,
    };
}

/// Finite-`n` analogues of the limiting weight constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    /// `tr(W²) / n`
    pub tr_w2_over_n: f64,
    /// `tr(WᵗWM) / n`
    pub tr_w2m_over_n: f64,
    /// `Σ W_ii² / n`
    pub sum_wii2_over_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainedVariationEstimate {
    /// Raw estimate; may fall outside `[0, 1]`.
    pub r2: f64,
    pub r2_clamped: f64,
    pub sigma_s2: f64,
    pub sigma_eps2: f64,
    pub sigma_y2: f64,
    /// `NaN` for the least-squares weight.
    pub lambda_final: f64,
    /// `tr{W(M - I)} / n` for `W_λ`; `tr(W_*) / n` for least squares.
    pub denominator_c: f64,
    pub weight_diagnostics: WeightDiagnostics,
}

impl ExplainedVariationEstimate {
    fn new(
        r2: f64,
        sigma_y2: f64,
        lambda_final: f64,
        denominator_c: f64,
        weight_diagnostics: WeightDiagnostics,
    ) -> Self {
        let r2_clamped = r2.clamp(0.0, 1.0);
        ExplainedVariationEstimate {
            r2,
            r2_clamped,
            sigma_s2: r2_clamped * sigma_y2,
            sigma_eps2: (1.0 - r2_clamped) * sigma_y2,
            sigma_y2,
            lambda_final,
            denominator_c,
            weight_diagnostics,
        }
    }
}

/// `(η - 1) / (1 + λη)²`.
#[inline]
pub fn weight_eigenvalue(eta: f64, lambda: f64) -> f64 {
    let s = 1.0 + lambda * eta;
    (eta - 1.0) / (s * s)
}

/// Eigenvalues of `W_λ`, paired with the eigenvalues of `M`.
pub fn weight_eigenvalues(g: &SpectralGram, lambda: f64) -> Vec<f64> {
    debug_assert!(lambda >= 0.0);
    g.eigenvalues()
        .iter()
        .map(|&eta| weight_eigenvalue(eta, lambda))
        .collect()
}

/// Diagonal of `W_λ`: `W_ii = Σ_k U_ik² w_k`.
pub fn weight_diagonals(g: &SpectralGram, lambda: f64) -> Vec<f64> {
    g.spectral_diagonal(&weight_eigenvalues(g, lambda))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// Outcome projected on the eigenbasis, reused across `λ` values.
struct ProjectedOutcome {
    coords: Vec<f64>,
    sigma_y2: f64,
}

impl ProjectedOutcome {
    fn new(d: &Dataset, g: &SpectralGram) -> Result<Self> {
        if d.n() != g.n() {
            return Err(Error::Dimension(format!(
                "dataset has {} rows but the Gram matrix is {}×{}",
                d.n(),
                g.n(),
                g.n()
            )));
        }
        let (_, sigma_y2) = d.outcome_moments();
        let y = d.standardized_outcome()?;
        Ok(ProjectedOutcome {
            coords: g.project(&y),
            sigma_y2,
        })
    }

    fn estimate(&self, g: &SpectralGram, lambda: f64) -> Result<ExplainedVariationEstimate> {
        let n = g.n() as f64;
        let eta = g.eigenvalues();
        let w = weight_eigenvalues(g, lambda);
        let ones = g.ones_coords();

        let tr_w: f64 = w.iter().sum();
        let one_w_one: f64 = w.iter().zip(ones).map(|(wk, s)| wk * s * s).sum::<f64>() / n;
        let tr_w_center = tr_w - one_w_one;
        let quad: f64 = w.iter().zip(&self.coords).map(|(wk, a)| wk * a * a).sum();
        let tr_wm: f64 = w.iter().zip(eta).map(|(wk, e)| wk * e).sum();

        let numerator = quad - tr_w_center;
        let denominator = tr_wm - tr_w_center;
        if !(denominator.abs() >= 1e-10 * n) {
            return Err(Error::DegenerateDesign);
        }

        let diag = g.spectral_diagonal(&w);
        let diagnostics = WeightDiagnostics {
            tr_w2_over_n: w.iter().map(|v| v * v).sum::<f64>() / n,
            tr_w2m_over_n: w.iter().zip(eta).map(|(v, e)| v * v * e).sum::<f64>() / n,
            sum_wii2_over_n: diag.iter().map(|v| v * v).sum::<f64>() / n,
        };
        let c = (tr_wm - tr_w) / n;
        Ok(ExplainedVariationEstimate::new(
            numerator / denominator,
            self.sigma_y2,
            lambda,
            c,
            diagnostics,
        ))
    }
}

/// `r̂²_λ` at a fixed `λ ≥ 0`.
pub fn estimate_r2_weighted(
    d: &Dataset,
    g: &SpectralGram,
    lambda: f64,
) -> Result<ExplainedVariationEstimate> {
    check_lambda(lambda)?;
    ProjectedOutcome::new(d, g)?.estimate(g, lambda)
}

/// Starts at `lambda0` and applies `iterations` updates
/// `λ ← r̂² / (1 - r̂²)`, with `r̂²` clamped to `[0, 0.999]` for the update.
pub fn iterate_lambda(
    d: &Dataset,
    g: &SpectralGram,
    lambda0: f64,
    iterations: usize,
) -> Result<ExplainedVariationEstimate> {
    check_lambda(lambda0)?;
    let projected = ProjectedOutcome::new(d, g)?;
    let mut est = projected.estimate(g, lambda0)?;
    for _ in 0..iterations {
        est = projected.estimate(g, next_lambda(est.r2))?;
    }
    Ok(est)
}

/// Fixed-point update of `λ` from the current raw estimate.
pub fn next_lambda(r2: f64) -> f64 {
    let r = r2.clamp(0.0, LAMBDA_UPDATE_CAP);
    r / (1.0 - r)
}

/// Residual projector of `[1, X]` and what the variance code needs from it.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    projector: Mat<f64>,
    rank: usize,
    df: usize,
}

impl LeastSquaresFit {
    /// `W_* = I - 11ᵗ/n - QQᵗ` for an orthonormal basis `Q` of the centered
    /// column space.
    pub fn projector(&self) -> &Mat<f64> {
        &self.projector
    }

    /// Numerical rank of the centered design.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Residual degrees of freedom `n - 1 - rank`.
    pub fn df(&self) -> usize {
        self.df
    }

    pub fn n(&self) -> usize {
        self.projector.nrows()
    }

    /// Orthonormal `n × df` basis of the residual space.
    ///
    /// Every orthonormal basis of the range of `W_*` reproduces the projector,
    /// but fourth-moment sums such as `Σ_jk U_jk⁴` depend on the choice. The
    /// unit eigenspace is degenerate, so a solver's eigenvectors are arbitrary
    /// within it; instead the columns `W_* e_1, W_* e_2, ...` are
    /// orthonormalized in order (twice-iterated Gram–Schmidt), skipping any
    /// that add no new direction, and each vector is signed so its entry at
    /// its own generating index is positive. The result is deterministic and
    /// as localized as the projector allows.
    pub fn residual_basis(&self) -> Result<Mat<f64>> {
        let n = self.n();
        let p = &self.projector;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.df);
        for k in 0..n {
            if basis.len() == self.df {
                break;
            }
            let mut v = p.col_as_slice(k).to_vec();
            let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm0 > 0.0) {
                continue;
            }
            for _ in 0..2 {
                for q in &basis {
                    let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 1e-8 * norm0 {
                continue;
            }
            let s = if v[k] < 0.0 { -1.0 / norm } else { 1.0 / norm };
            v.iter_mut().for_each(|x| *x *= s);
            basis.push(v);
        }
        if basis.len() != self.df {
            return Err(Error::Eigen(format!(
                "residual projector spans {} directions, expected {}",
                basis.len(),
                self.df
            )));
        }
        Ok(Mat::from_fn(n, self.df, |i, j| basis[j][i]))
    }
}

/// `r̂²_* = 1 - RSS / (σ̂_Y² (n - 1 - rank))` from the regression of `Y` on
/// `[1, X]`. Works on raw or standardized covariates alike; rank-deficient
/// designs use the pseudo-inverse projector.
pub fn estimate_r2_ls(d: &Dataset) -> Result<(ExplainedVariationEstimate, LeastSquaresFit)> {
    let (n, p) = (d.n(), d.p());
    let mut xc = d.covariates().clone();
    for j in 0..p {
        let col = xc.col_as_slice_mut(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    let svd = xc
        .thin_svd()
        .map_err(|e| Error::Eigen(format!("singular value decomposition failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let top = if s.nrows() > 0 { s[0] } else { 0.0 };
    let tol = n.max(p) as f64 * f64::EPSILON * top;
    let rank = (0..s.nrows()).filter(|&k| s[k] > tol).count();
    if n <= rank + 1 {
        return Err(Error::LeastSquaresUnavailable { n, rank });
    }
    let df = n - 1 - rank;
    let u = svd.U();
    let q = Mat::<f64>::from_fn(n, rank, |i, j| u[(i, j)]);

    let (_, sigma_y2) = d.outcome_moments();
    let y = d.standardized_outcome()?;
    let coef = linalg::transpose_times(q.as_ref(), &y);
    let mut rss = 0.0;
    for i in 0..n {
        let fitted: f64 = (0..rank).map(|k| q[(i, k)] * coef[k]).sum();
        let r = y[i] - fitted;
        rss += r * r;
    }
    // y is standardized, so σ̂_Y² cancels
    let r2 = 1.0 - rss / df as f64;

    let qqt = &q * q.transpose();
    let inv_n = 1.0 / n as f64;
    let projector = Mat::<f64>::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_n - 0.5 * (qqt[(i, j)] + qqt[(j, i)])
    });
    let nf = n as f64;
    let diagnostics = WeightDiagnostics {
        tr_w2_over_n: df as f64 / nf,
        tr_w2m_over_n: 0.0,
        sum_wii2_over_n: (0..n).map(|i| projector[(i, i)].powi(2)).sum::<f64>() / nf,
    };
    let est = ExplainedVariationEstimate::new(r2, sigma_y2, f64::NAN, df as f64 / nf, diagnostics);
    Ok((est, LeastSquaresFit { projector, rank, df }))
}

/// Runs the estimator selected by `scheme`.
pub fn estimate(
    d: &Dataset,
    g: Option<&SpectralGram>,
    scheme: WeightScheme,
) -> Result<ExplainedVariationEstimate> {
    match scheme {
        WeightScheme::RidgeSpectral { lambda, iterations } => {
            let g = g.ok_or_else(|| {
                Error::InvalidParameter("the ridge spectral weight needs a Gram spectrum".into())
            })?;
            iterate_lambda(d, g, lambda, iterations)
        }
        WeightScheme::LeastSquares => estimate_r2_ls(d).map(|(est, _)| est),
    }
}
