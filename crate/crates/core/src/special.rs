//! Quantiles of the standard normal and chi-square distributions.
//!
//! The regularized incomplete gamma functions and `erfc⁻¹` come from `statrs`;
//! the chi-square inversion is a safeguarded Halley iteration on whichever
//! tail is smaller, which holds relative accuracy near both ends.

use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// `Φ⁻¹(prob)` for `0 < prob < 1`.
pub fn normal_quantile(prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "normal quantile needs 0 < prob < 1, got {prob}"
        )));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * prob))
}

/// Two-sided critical value `z_{1-(1-level)/2}`.
pub fn normal_critical(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    normal_quantile(0.5 + 0.5 * level)
}

/// Chi-square CDF with `df` degrees of freedom.
pub fn chi_square_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * df, 0.5 * x)
    }
}

/// Quantile of the chi-square distribution: the `x` with `P(χ²_df ≤ x) = prob`.
pub fn chi_square_quantile(prob: f64, df: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "chi-square quantile needs 0 < prob < 1, got {prob}"
        )));
    }
    if !(df > 0.0 && df.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "chi-square degrees of freedom must be positive, got {df}"
        )));
    }
    Ok(2.0 * inverse_gamma_p(0.5 * df, prob))
}

/// Solves `P(a, x) = prob` for `x`.
fn inverse_gamma_p(a: f64, prob: f64) -> f64 {
    let lower_tail = prob <= 0.5;
    let target = if lower_tail { prob } else { 1.0 - prob };
    let gln = ln_gamma(a);

    let mut x = initial_guess(a, prob);
    for _ in 0..200 {
        if x <= 0.0 {
            return 0.0;
        }
        // residual expressed in the smaller tail
        let err = if lower_tail {
            gamma_lr(a, x) - target
        } else {
            target - gamma_ur(a, x)
        };
        let density = ((a - 1.0) * x.ln() - x - gln).exp();
        if density == 0.0 {
            break;
        }
        let u = err / density;
        let step = u / (1.0 - 0.5 * f64::min(1.0, u * ((a - 1.0) / x - 1.0)));
        let mut next = x - step;
        if next <= 0.0 {
            next = 0.5 * x;
        }
        let done = (next - x).abs() <= 1e-15 * next.max(f64::MIN_POSITIVE);
        x = next;
        if done {
            break;
        }
    }
    x
}

fn initial_guess(a: f64, prob: f64) -> f64 {
    if a > 1.0 {
        let pp = if prob < 0.5 { prob } else { 1.0 - prob };
        let t = (-2.0 * pp.ln()).sqrt();
        let mut z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t;
        if prob < 0.5 {
            z = -z;
        }
        let base = 1.0 - 1.0 / (9.0 * a) - z / (3.0 * a.sqrt());
        f64::max(1e-3, a * base * base * base)
    } else {
        let t = 1.0 - a * (0.253 + a * 0.12);
        if prob < t {
            (prob / t).powf(1.0 / a)
        } else {
            1.0 - (1.0 - (prob - t) / (1.0 - t)).ln()
        }
    }
}

/// `E|u|^r` for `u ~ N(0, 1)` and `r > -1`: `2^{r/2} Γ((r+1)/2) / √π`.
pub fn normal_abs_moment(r: f64) -> f64 {
    (0.5 * r * std::f64::consts::LN_2 + ln_gamma(0.5 * (r + 1.0))
        - 0.5 * std::f64::consts::PI.ln())
    .exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_critical_value_at_95() {
        let z = normal_critical(0.95).unwrap();
        assert!((z - 1.959963984540054).abs() < 1e-12);
        assert!((normal_quantile(0.5).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn chi_square_table_values() {
        // df = 9 tail quantiles
        let lo = chi_square_quantile(0.025, 9.0).unwrap();
        let hi = chi_square_quantile(0.975, 9.0).unwrap();
        assert!((lo - 2.700389).abs() < 1e-6, "{lo}");
        assert!((hi - 19.022768).abs() < 1e-6, "{hi}");
        // df = 2 is exponential: x = -2 ln(1 - p)
        let q = chi_square_quantile(0.3, 2.0).unwrap();
        assert!((q - (-2.0 * (0.7f64).ln())).abs() < 1e-12 * q);
    }

    #[test]
    fn chi_square_inverse_is_accurate_to_1e10() {
        for &df in &[0.5, 1.0, 3.0, 9.0, 99.0, 199.0, 1000.0] {
            for &p in &[1e-8, 0.001, 0.025, 0.3, 0.5, 0.7, 0.975, 0.999, 1.0 - 1e-8] {
                let q = chi_square_quantile(p, df).unwrap();
                let back = if p <= 0.5 {
                    chi_square_cdf(q, df) / p
                } else {
                    gamma_ur(0.5 * df, 0.5 * q) / (1.0 - p)
                };
                assert!((back - 1.0).abs() < 1e-10, "df={df} p={p} q={q} back={back}");
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(chi_square_quantile(0.0, 3.0).is_err());
        assert!(chi_square_quantile(0.5, 0.0).is_err());
        assert!(normal_critical(1.0).is_err());
    }

    #[test]
    fn normal_absolute_moments() {
        assert!((normal_abs_moment(2.0) - 1.0).abs() < 1e-13);
        assert!((normal_abs_moment(4.0) - 3.0).abs() < 1e-12);
        assert!((normal_abs_moment(6.0) - 15.0).abs() < 1e-11);
    }
}
