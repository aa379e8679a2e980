//! Variance estimates for `√n (r̂² - r²)` and the resulting intervals.
//!
//! Three estimators exist for the spectral weight: one valid only when the
//! covariates have no effect, one that assumes normal errors, and a robust one
//! that corrects the normal-error value with a fourth-moment term estimated
//! from the data. The least-squares weight has a normal-error and a robust
//! form, plus the chi-square pivot interval used as a baseline.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{numerical_rank, SpectralGram};
use crate::error::{Error, Result};
use crate::estimator::{weight_eigenvalues, ExplainedVariationEstimate, LeastSquaresFit};
use crate::linalg;
use crate::quadrature;
use crate::special::{chi_square_quantile, normal_critical};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMethod {
    /// Valid under `α = 0` only (testing `σ_s² = 0`).
    NullCase,
    /// Consistent when the errors are normal.
    NormalError,
    /// No normality assumption.
    Robust,
}

impl VarianceMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            VarianceMethod::NullCase => "null",
            VarianceMethod::NormalError => "normal",
            VarianceMethod::Robust => "robust",
        }
    }
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(VarianceMethod::NullCase),
            "normal" => Ok(VarianceMethod::NormalError),
            "robust" => Ok(VarianceMethod::Robust),
            other => Err(Error::InvalidParameter(format!(
                "unknown variance method '{other}' (expected null, normal or robust)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub r2_point: f64,
    /// Estimate of `v²`, the variance of `√n (r̂² - r²)`.
    pub variance_of_sqrt_n: f64,
    pub method: VarianceMethod,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub sigma_s2_interval: (f64, f64),
    pub sigma_eps2_interval: (f64, f64),
}

/// Trace functionals of `W_λ` computed from the spectrum of `M`.
#[derive(Debug, Clone)]
pub struct WeightedTraces {
    pub n: usize,
    /// `tr(WᵗW)`
    pub tr_w2: f64,
    /// `tr(WᵗWM)`
    pub tr_w2m: f64,
    /// `tr{W(M - I)}`
    pub tr_w_m_minus_i: f64,
    /// `W_ii`
    pub diag: Vec<f64>,
}

impl WeightedTraces {
    pub fn new(g: &SpectralGram, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        let w = weight_eigenvalues(g, lambda);
        let eta = g.eigenvalues();
        let n = g.n();
        let tr_w_m_minus_i: f64 = w.iter().zip(eta).map(|(wk, e)| wk * (e - 1.0)).sum();
        if !(tr_w_m_minus_i.abs() >= 1e-10 * n as f64) {
            return Err(Error::DegenerateDesign);
        }
        Ok(WeightedTraces {
            n,
            tr_w2: w.iter().map(|v| v * v).sum(),
            tr_w2m: w.iter().zip(eta).map(|(v, e)| v * v * e).sum(),
            tr_w_m_minus_i,
            diag: g.spectral_diagonal(&w),
        })
    }

    /// `C = tr{W(M - I)} / n`.
    pub fn c(&self) -> f64 {
        self.tr_w_m_minus_i / self.n as f64
    }

    /// `Σ W_ii² / n`.
    pub fn mean_diag_sq(&self) -> f64 {
        self.diag.iter().map(|v| v * v).sum::<f64>() / self.n as f64
    }
}

fn check_outcome(g: &SpectralGram, y: &[f64]) -> Result<()> {
    if y.len() != g.n() {
        return Err(Error::Dimension(format!(
            "outcome has {} entries, Gram matrix is {}×{}",
            y.len(),
            g.n(),
            g.n()
        )));
    }
    Ok(())
}

/// `φ(x) = x(x - 1) / (1 + λx)²`.
#[inline]
pub fn spectral_phi(x: f64, lambda: f64) -> f64 {
    let s = 1.0 + lambda * x;
    x * (x - 1.0) / (s * s)
}

/// `τ̂² = (1/p) Σ φ(η_k)² - {(1/p) Σ φ(η_k)}²` over the nonzero eigenvalues.
pub fn tau2_hat(g: &SpectralGram, lambda: f64) -> f64 {
    tau2_from_eigenvalues(g.eigenvalues(), g.n(), g.p(), lambda)
}

/// [`tau2_hat`] from descending eigenvalues alone. At most `min(n, p)`
/// eigenvalues above the rank tolerance enter the sums; the divisor is `p`.
pub fn tau2_from_eigenvalues(eigenvalues: &[f64], n: usize, p: usize, lambda: f64) -> f64 {
    let count = numerical_rank(eigenvalues, n, p).min(n.min(p));
    let pf = p as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for &eta in eigenvalues.iter().take(count) {
        let phi = spectral_phi(eta, lambda);
        s1 += phi;
        s2 += phi * phi;
    }
    let (m1, m2) = (s1 / pf, s2 / pf);
    (m2 - m1 * m1).max(0.0)
}

/// Marchenko–Pastur law of the `n × n` Gram matrix with ratio `ξ = n / p`.
///
/// The continuous part has density `√((b - x)(x - a)) / (2πξx)` on
/// `[a, b] = [(1 - √ξ)², (1 + √ξ)²]` and mass `min(1, 1/ξ)`; for `ξ > 1` the
/// remaining `1 - 1/ξ` sits at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpLaw {
    pub xi: f64,
    pub support_lower: f64,
    pub support_upper: f64,
    pub point_mass_at_zero: f64,
}

/// Absolute tolerance for all integrals against the MP law.
pub const MP_QUADRATURE_TOL: f64 = 1e-10;

impl MpLaw {
    pub fn new(xi: f64) -> Result<Self> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "aspect ratio must be positive and finite, got {xi}"
            )));
        }
        let r = xi.sqrt();
        Ok(MpLaw {
            xi,
            support_lower: (1.0 - r).powi(2),
            support_upper: (1.0 + r).powi(2),
            point_mass_at_zero: (1.0 - 1.0 / xi).max(0.0),
        })
    }

    /// Density of the continuous part.
    pub fn density(&self, x: f64) -> f64 {
        let (a, b) = (self.support_lower, self.support_upper);
        if x <= a || x >= b || x <= 0.0 {
            return 0.0;
        }
        ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * self.xi * x)
    }

    /// `∫ f dν` over the continuous part `[a, b]`.
    ///
    /// Uses `x = c + h cos θ`, which turns the square-root edges into a
    /// smooth integrand on `[0, π]`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, tol: f64) -> Result<f64> {
        let (a, b) = (self.support_lower, self.support_upper);
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let scale = h * h / (2.0 * std::f64::consts::PI * self.xi);
        quadrature::integrate(
            |theta| {
                let x = c + h * theta.cos();
                let s = theta.sin();
                f(x) * scale * s * s / x
            },
            0.0,
            std::f64::consts::PI,
            tol,
        )
    }

    /// Mass of the continuous part.
    pub fn continuous_mass(&self) -> Result<f64> {
        self.integrate(|_| 1.0, MP_QUADRATURE_TOL)
    }
}

/// Limiting `τ²` for ratio `ξ` at `λ`, in the same normalization as
/// [`tau2_hat`].
///
/// `τ̂²` averages over `p` eigenvalues, so its limit is the variance of `φ`
/// under the spectral law of the `p × p` companion `ZᵗZ / p`: the continuous
/// part of [`MpLaw`] scaled by `ξ` (plus an atom at zero when `ξ < 1`, where
/// `φ` vanishes). At `ξ = 1` the two laws coincide.
pub fn mp_tau2_theoretical(xi: f64, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let law = MpLaw::new(xi)?;
    let m1 = xi * law.integrate(|x| spectral_phi(x, lambda), MP_QUADRATURE_TOL)?;
    let m2 = xi * law.integrate(|x| spectral_phi(x, lambda).powi(2), MP_QUADRATURE_TOL)?;
    Ok((m2 - m1 * m1).max(0.0))
}

/// Variance estimate valid when the covariates have no effect.
/// `y` is the standardized outcome.
pub fn var_null(g: &SpectralGram, y: &[f64], lambda: f64) -> Result<f64> {
    check_outcome(g, y)?;
    let t = WeightedTraces::new(g, lambda)?;
    let n = t.n as f64;
    let sum_d2: f64 = t.diag.iter().map(|v| v * v).sum();
    let kurt: f64 = t
        .diag
        .iter()
        .zip(y)
        .map(|(d, yi)| d * d * (yi * yi - 1.0).powi(2))
        .sum();
    let num = 2.0 / n * (t.tr_w2 - sum_d2) + kurt / n;
    Ok((num / t.c().powi(2)).max(0.0))
}

/// Normal-error variance estimate `ṽ²_λ`, using the raw `r̂²`.
pub fn var_normal_error(
    est: &ExplainedVariationEstimate,
    g: &SpectralGram,
    lambda: f64,
) -> Result<f64> {
    let t = WeightedTraces::new(g, lambda)?;
    Ok(normal_error_from_traces(est.r2, &t, tau2_hat(g, lambda), g.p()))
}

fn normal_error_from_traces(r2: f64, t: &WeightedTraces, tau2: f64, p: usize) -> f64 {
    let n = t.n as f64;
    let q = 1.0 - r2;
    let num = 2.0 * r2 * r2 * tau2 * p as f64 / n
        + 4.0 * r2 * q * t.tr_w2m / n
        + 2.0 * q * q * t.tr_w2 / n;
    num / t.c().powi(2)
}

/// Robust variance estimate `v̂²_λ`: the normal-error value with its
/// Gaussian fourth-moment term replaced by an empirical one.
pub fn var_robust(
    est: &ExplainedVariationEstimate,
    g: &SpectralGram,
    y: &[f64],
    lambda: f64,
) -> Result<f64> {
    check_outcome(g, y)?;
    let t = WeightedTraces::new(g, lambda)?;
    let r2 = est.r2;
    let q = 1.0 - r2;
    let n = t.n as f64;
    let c2 = t.c().powi(2);
    let mean_d2 = t.mean_diag_sq();
    let tilde = normal_error_from_traces(r2, &t, tau2_hat(g, lambda), g.p());

    let m = g.m();
    let fourth: f64 = y
        .iter()
        .enumerate()
        .map(|(i, yi)| (yi * yi - 1.0 - (m[(i, i)] - 1.0) * r2).powi(2))
        .sum::<f64>()
        / n;
    let va = (fourth - 4.0 * r2 * q - 2.0 * r2 * r2) / c2 * mean_d2;
    let v = tilde - 2.0 * q * q * mean_d2 / c2 + va.max(0.0);
    if v < 0.0 {
        warn!("robust variance estimate {v:e} is negative; flooring at 0");
        return Ok(0.0);
    }
    Ok(v)
}

/// Variance of `√n (r̂²_* - r²)` for the least-squares weight. With
/// `df = n - 1 - rank` residual dimensions and `q = n - df` fitted ones:
///
/// * normal: `2n/df · (1 - r̂²)²`
/// * robust: `2q(1 - r̂²)²/df + max{[Σ_j (U_jᵗy)⁴ - 3 df (1 - r̂²)²] / Σ_jk U_jk⁴ + 2(1 - r̂²)², 0}`
///
/// where `U` is [`LeastSquaresFit::residual_basis`] and `y` the standardized
/// outcome.
pub fn var_ls(
    est: &ExplainedVariationEstimate,
    fit: &LeastSquaresFit,
    y: &[f64],
    robust: bool,
) -> Result<f64> {
    let n = fit.n();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "outcome has {} entries, projector is {n}×{n}",
            y.len()
        )));
    }
    let df = fit.df() as f64;
    let q2 = (1.0 - est.r2).powi(2);
    if !robust {
        return Ok(2.0 * n as f64 / df * q2);
    }
    let basis = fit.residual_basis()?;
    let coords = linalg::transpose_times(basis.as_ref(), y);
    let sum_fourth: f64 = coords.iter().map(|c| c.powi(4)).sum();
    let mut sum_u4 = 0.0;
    for j in 0..basis.ncols() {
        sum_u4 += basis.col_as_slice(j).iter().map(|u| u.powi(4)).sum::<f64>();
    }
    let fitted = (n - fit.df()) as f64;
    let excess = (sum_fourth - 3.0 * df * q2) / sum_u4 + 2.0 * q2;
    Ok(2.0 * fitted * q2 / df + excess.max(0.0))
}

/// Chi-square pivot interval for `r̂²_*` with `n - p - 1` degrees of
/// freedom; endpoints sorted and clamped to `[0, 1]`.
pub fn chi_square_interval(r2_star: f64, n: usize, p: usize, level: f64) -> Result<(f64, f64)> {
    if n <= p + 1 {
        return Err(Error::LeastSquaresUnavailable { n, rank: p });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let df = (n - p - 1) as f64;
    let alpha = 1.0 - level;
    let q_lo = chi_square_quantile(0.5 * alpha, df)?;
    let q_hi = chi_square_quantile(1.0 - 0.5 * alpha, df)?;
    let resid = 1.0 - r2_star;
    let a = 1.0 - resid / (q_lo / df);
    let b = 1.0 - resid / (q_hi / df);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    Ok((lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0)))
}

/// `r̂² ± z · √(v²/n)` clamped to `[0, 1]`. The `σ_s²` and `σ_ε²` intervals
/// scale the `r²` interval by `σ̂_Y²`, treating it as fixed.
pub fn normal_interval(
    est: &ExplainedVariationEstimate,
    v2: f64,
    n: usize,
    level: f64,
    method: VarianceMethod,
) -> Result<IntervalReport> {
    if !(v2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variance must be non-negative, got {v2}"
        )));
    }
    let z = normal_critical(level)?;
    let margin = z * (v2 / n as f64).sqrt();
    let lower = (est.r2 - margin).clamp(0.0, 1.0);
    let upper = (est.r2 + margin).clamp(0.0, 1.0);
    let sy = est.sigma_y2;
    Ok(IntervalReport {
        r2_point: est.r2,
        variance_of_sqrt_n: v2,
        method,
        level,
        lower,
        upper,
        sigma_s2_interval: (sy * lower, sy * upper),
        sigma_eps2_interval: (sy * (1.0 - upper), sy * (1.0 - lower)),
    })
}

/// Variance for the spectral weight by method.
pub fn var_weighted(
    method: VarianceMethod,
    est: &ExplainedVariationEstimate,
    g: &SpectralGram,
    y: &[f64],
) -> Result<f64> {
    let lambda = est.lambda_final;
    match method {
        VarianceMethod::NullCase => var_null(g, y, lambda),
        VarianceMethod::NormalError => var_normal_error(est, g, lambda),
        VarianceMethod::Robust => var_robust(est, g, y, lambda),
    }
}
