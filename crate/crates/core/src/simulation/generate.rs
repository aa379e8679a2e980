//! Data generators for the simulation protocol.

use faer::Mat;
use log::warn;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, Uniform};

use super::config::{CovariateDist, Design, EffectPattern, ErrorDist, ScenarioConfig};
use crate::data::standardize_in_place;
use crate::error::{Error, Result};
use crate::linalg::{self, sym_eigen};
use crate::special::normal_abs_moment;

/// Total outcome variance `σ_s² + σ_ε²` used to place `r2_true` on a scale.
pub const TOTAL_VARIANCE: f64 = 10.0;

/// Attempts at drawing a repairable correlation matrix.
pub const MAX_CORRELATION_ATTEMPTS: usize = 10;

/// `sign(u)|u|^γ`, or `|u|^γ` when `drop_sign`.
#[inline]
pub fn power_transform(u: f64, gamma: f64, drop_sign: bool) -> f64 {
    let m = u.abs().powf(gamma);
    if drop_sign || u >= 0.0 {
        m
    } else {
        -m
    }
}

/// `(σ_s², σ_ε²)` for a target `r²`.
pub fn signal_noise(r2_true: f64) -> (f64, f64) {
    (TOTAL_VARIANCE * r2_true, TOTAL_VARIANCE * (1.0 - r2_true))
}

/// Population mean and standard deviation of one transformed covariate draw.
fn covariate_moments(dist: CovariateDist) -> (f64, f64) {
    match dist {
        CovariateDist::NormalPower { gamma } => (0.0, normal_abs_moment(2.0 * gamma).sqrt()),
        CovariateDist::ChiSquare1 => (1.0, std::f64::consts::SQRT_2),
    }
}

fn draw_covariate(dist: CovariateDist, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = StandardNormal.sample(rng);
    match dist {
        CovariateDist::NormalPower { gamma } => power_transform(u, gamma, false),
        CovariateDist::ChiSquare1 => power_transform(u, 2.0, true),
    }
}

/// One error draw with mean zero and unit variance.
fn draw_error(dist: ErrorDist, scale: f64, rng: &mut ChaCha8Rng) -> f64 {
    match dist {
        ErrorDist::NormalPower { gamma } => {
            let u: f64 = StandardNormal.sample(rng);
            power_transform(u, gamma, false) / scale
        }
        ErrorDist::Exponential => {
            let e: f64 = Exp1.sample(rng);
            e - 1.0
        }
    }
}

fn error_scale(dist: ErrorDist) -> f64 {
    match dist {
        ErrorDist::NormalPower { gamma } => normal_abs_moment(2.0 * gamma).sqrt(),
        ErrorDist::Exponential => 1.0,
    }
}

/// Population covariance structure of the covariates, fixed for a scenario.
#[derive(Debug, Clone)]
pub enum DesignModel {
    Independent,
    Correlated {
        correlation: Mat<f64>,
        sqrt: Mat<f64>,
        /// Eigenvalues raised to zero during the PSD repair.
        floored: usize,
        attempts: usize,
    },
}

impl DesignModel {
    /// Builds the model for `cfg`. Correlated designs draw their matrix from
    /// `rng_for_attempt(k)` for `k = 0, 1, ...` until one passes the repair
    /// check.
    pub fn new(cfg: &ScenarioConfig, rng_for_attempt: impl Fn(usize) -> ChaCha8Rng) -> Result<Self> {
        match cfg.design {
            Design::Independent => Ok(DesignModel::Independent),
            Design::Correlated { a } => {
                for attempt in 0..MAX_CORRELATION_ATTEMPTS {
                    let mut rng = rng_for_attempt(attempt);
                    if let Some((correlation, sqrt, floored)) = correlated_matrix(cfg.p, a, &mut rng)? {
                        return Ok(DesignModel::Correlated {
                            correlation,
                            sqrt,
                            floored,
                            attempts: attempt + 1,
                        });
                    }
                    warn!("correlation draw {} failed the PSD repair check; redrawing", attempt + 1);
                }
                Err(Error::CorrelationRepair(MAX_CORRELATION_ATTEMPTS))
            }
        }
    }

    /// `αᵗ C α`, the population variance of `xᵗα`.
    pub fn quadratic_form(&self, alpha: &[f64]) -> f64 {
        match self {
            DesignModel::Independent => alpha.iter().map(|a| a * a).sum(),
            DesignModel::Correlated { correlation, .. } => {
                let p = alpha.len();
                let mut total = 0.0;
                for j in 0..p {
                    let col = correlation.col_as_slice(j);
                    let cj: f64 = col.iter().zip(alpha).map(|(c, a)| c * a).sum();
                    total += alpha[j] * cj;
                }
                total
            }
        }
    }
}

/// Draws `|(AB)ᵗ(AB)|`, normalizes it to a correlation matrix and floors its
/// negative eigenvalues. `None` when flooring moves some eigenvalue by more
/// than half the spectral radius.
fn correlated_matrix(
    p: usize,
    a: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(Mat<f64>, Mat<f64>, usize)>> {
    let mat_a = Mat::<f64>::from_fn(p, p, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        a + z
    });
    let unif = Uniform::new(-0.5, 0.5).expect("valid range");
    let mat_b = Mat::<f64>::from_fn(p, p, |_, _| unif.sample(rng));
    let ab = &mat_a * &mat_b;
    let d = ab.transpose() * &ab;
    let diag: Vec<f64> = (0..p).map(|i| d[(i, i)].abs().sqrt()).collect();
    if diag.iter().any(|v| !(*v > 0.0)) {
        return Ok(None);
    }
    let raw = Mat::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            0.5 * (d[(i, j)].abs() + d[(j, i)].abs()) / (diag[i] * diag[j])
        }
    });

    let eig = sym_eigen(raw.as_ref())?;
    let radius = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = eig.values.iter().fold(0.0f64, |m, v| m.max(-v));
    if worst > 0.5 * radius {
        return Ok(None);
    }
    let floored = eig.values.iter().filter(|v| **v < 0.0).count();
    let repaired = linalg::spectral_function(&eig, |v| v.max(0.0));
    let scale: Vec<f64> = (0..p).map(|i| repaired[(i, i)].sqrt()).collect();
    if scale.iter().any(|v| !(*v > 0.0)) {
        return Ok(None);
    }
    let correlation = Mat::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            repaired[(i, j)] / (scale[i] * scale[j])
        }
    });
    let eig = sym_eigen(correlation.as_ref())?;
    let sqrt = linalg::spectral_function(&eig, |v| v.max(0.0).sqrt());
    Ok(Some((correlation, sqrt, floored)))
}

/// `n × p` design. Independent designs are column-standardized with sample
/// moments; correlated designs standardize each draw by its population
/// moments and then apply `C^{1/2}`.
pub fn gen_design(cfg: &ScenarioConfig, model: &DesignModel, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let (n, p) = (cfg.n, cfg.p);
    let mut g = Mat::<f64>::zeros(n, p);
    for j in 0..p {
        for v in g.col_as_slice_mut(j) {
            *v = draw_covariate(cfg.covariate_dist, rng);
        }
    }
    match model {
        DesignModel::Independent => {
            for j in 0..p {
                let col = g.col_as_slice_mut(j);
                if !standardize_in_place(col) {
                    // measure-zero for continuous draws; leave centered
                    let mean = col.iter().sum::<f64>() / n as f64;
                    col.iter_mut().for_each(|v| *v -= mean);
                }
            }
            g
        }
        DesignModel::Correlated { sqrt, .. } => {
            let (mu, sd) = covariate_moments(cfg.covariate_dist);
            for j in 0..p {
                g.col_as_slice_mut(j).iter_mut().for_each(|v| *v = (*v - mu) / sd);
            }
            &g * sqrt
        }
    }
}

/// Effect vector with population signal variance `αᵗCα = σ_s²` exactly.
pub fn gen_effects(cfg: &ScenarioConfig, model: &DesignModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = cfg.p;
    let (sigma_s2, _) = signal_noise(cfg.r2_true);
    if sigma_s2 == 0.0 {
        return vec![0.0; p];
    }
    let mut alpha = match cfg.effect_pattern {
        EffectPattern::HalfConstant => {
            let h = (p / 2).max(1);
            let c = (sigma_s2 / h as f64).sqrt();
            (0..p).map(|k| if k < h { c } else { 0.0 }).collect::<Vec<_>>()
        }
        EffectPattern::NormalRandom => (0..p).map(|_| StandardNormal.sample(rng)).collect(),
    };
    let current = model.quadratic_form(&alpha);
    if matches!(cfg.effect_pattern, EffectPattern::NormalRandom)
        || matches!(model, DesignModel::Correlated { .. })
    {
        let s = (sigma_s2 / current).sqrt();
        alpha.iter_mut().for_each(|a| *a *= s);
    }
    alpha
}

/// `y = Xα + ε` with `ε` scaled to variance `σ_ε²`. Returns `(y, α)`.
pub fn gen_outcome(
    x: &Mat<f64>,
    cfg: &ScenarioConfig,
    model: &DesignModel,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let alpha = gen_effects(cfg, model, rng);
    let (_, sigma_e2) = signal_noise(cfg.r2_true);
    let sigma_e = sigma_e2.sqrt();
    let scale = error_scale(cfg.error_dist);
    let mut y = vec![0.0; cfg.n];
    for (k, a) in alpha.iter().enumerate() {
        if *a != 0.0 {
            for (yi, xi) in y.iter_mut().zip(x.col_as_slice(k)) {
                *yi += a * xi;
            }
        }
    }
    for yi in y.iter_mut() {
        *yi += sigma_e * draw_error(cfg.error_dist, scale, rng);
    }
    (y, alpha)
}

/// Sample `(mean, variance)` of a slice with denominator `n`.
#[cfg(test)]
fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn power_transform_cases() {
        assert_eq!(power_transform(-1.7, 1.0, false), -1.7);
        assert_eq!(power_transform(-2.0, 3.0, false), -8.0);
        assert_eq!(power_transform(-2.0, 2.0, true), 4.0);
        assert_eq!(power_transform(0.0, 3.0, false), 0.0);
    }

    #[test]
    fn half_constant_effects() {
        let cfg = ScenarioConfig::new(50, 100, 0.5, 1, 0);
        let alpha = gen_effects(&cfg, &DesignModel::Independent, &mut rng(0));
        assert_eq!(alpha.iter().filter(|a| **a != 0.0).count(), 50);
        assert!((alpha[0] - 0.1f64.sqrt()).abs() < 1e-15);
        assert!((alpha[0] - 0.3162).abs() < 1e-4);
        let ss: f64 = alpha.iter().map(|a| a * a).sum();
        assert!((ss - 5.0).abs() < 1e-12);
        let zero = gen_effects(&ScenarioConfig::new(50, 100, 0.0, 1, 0), &DesignModel::Independent, &mut rng(0));
        assert!(zero.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn normal_random_effects_hit_signal_exactly() {
        let mut cfg = ScenarioConfig::new(50, 37, 0.2, 1, 0);
        cfg.effect_pattern = EffectPattern::NormalRandom;
        let alpha = gen_effects(&cfg, &DesignModel::Independent, &mut rng(3));
        let ss: f64 = alpha.iter().map(|a| a * a).sum();
        assert!((ss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn independent_design_standardized() {
        let cfg = ScenarioConfig::new(60, 7, 0.2, 1, 0);
        let x = gen_design(&cfg, &DesignModel::Independent, &mut rng(1));
        for j in 0..7 {
            let (m, v) = moments(x.col_as_slice(j));
            assert!(m.abs() < 1e-12);
            assert!((v * 60.0 / 59.0 - 1.0).abs() < 1e-12);
        }
    }

    fn kurtosis(cfg: &ScenarioConfig, seed: u64) -> f64 {
        // raw draws, before sample standardization
        let mut r = rng(seed);
        let v: Vec<f64> = (0..cfg.n * cfg.p).map(|_| draw_covariate(cfg.covariate_dist, &mut r)).collect();
        let (m, var) = moments(&v);
        v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / v.len() as f64 / (var * var)
    }

    #[test]
    fn covariate_kurtosis() {
        let mut cfg = ScenarioConfig::new(1000, 200, 0.2, 1, 0);
        assert!((kurtosis(&cfg, 5) - 3.0).abs() < 0.3);
        cfg.covariate_dist = CovariateDist::NormalPower { gamma: 3.0 };
        assert!(kurtosis(&cfg, 5) > 10.0);
    }

    #[test]
    fn error_draws_have_unit_variance() {
        for dist in [ErrorDist::NormalPower { gamma: 3.0 }, ErrorDist::Exponential, ErrorDist::NormalPower { gamma: 1.0 }] {
            let s = error_scale(dist);
            let mut r = rng(9);
            let v: Vec<f64> = (0..400_000).map(|_| draw_error(dist, s, &mut r)).collect();
            let (m, var) = moments(&v);
            assert!(m.abs() < 0.02, "{dist:?} mean {m}");
            assert!((var - 1.0).abs() < 0.08, "{dist:?} var {var}");
        }
        assert!((error_scale(ErrorDist::NormalPower { gamma: 3.0 }).powi(2) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn population_r2_matches_target() {
        let cfg = ScenarioConfig::new(20_000, 20, 0.5, 1, 0);
        let model = DesignModel::Independent;
        let mut r = rng(11);
        let x = gen_design(&cfg, &model, &mut r);
        let (y, alpha) = gen_outcome(&x, &cfg, &model, &mut r);
        let signal: Vec<f64> = (0..cfg.n)
            .map(|i| (0..cfg.p).map(|k| x[(i, k)] * alpha[k]).sum())
            .collect();
        let ratio = moments(&signal).1 / moments(&y).1;
        assert!((ratio - 0.5).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn correlated_design_spread_and_shape() {
        let mut cfg = ScenarioConfig::new(3000, 50, 0.2, 1, 0);
        cfg.design = Design::Correlated { a: 2.0 };
        let model = DesignModel::new(&cfg, |k| {
            let mut r = rng(21);
            r.set_stream(1000 + k as u64);
            r
        })
        .unwrap();
        let DesignModel::Correlated { correlation, .. } = &model else { unreachable!() };
        let mut off: Vec<f64> = Vec::new();
        for i in 0..50 {
            assert!((correlation[(i, i)] - 1.0).abs() < 1e-12);
            for j in 0..i {
                off.push(correlation[(i, j)].abs());
            }
        }
        off.sort_by(f64::total_cmp);
        assert!(off[off.len() - 1] <= 1.0 && off[off.len() - 1] > 0.8, "{:?}", off.last());
        assert!(off[0] < 0.3, "{}", off[0]);

        // sample correlation of generated rows follows C
        let x = gen_design(&cfg, &model, &mut rng(22));
        let (i, j) = (0, 1);
        let (a, b) = (x.col_as_slice(i), x.col_as_slice(j));
        let (ma, va) = moments(a);
        let (mb, vb) = moments(b);
        let cov = a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / a.len() as f64;
        assert!((cov / (va * vb).sqrt() - correlation[(i, j)]).abs() < 0.06);
    }

    #[test]
    fn correlated_quadratic_form_sets_signal() {
        let mut cfg = ScenarioConfig::new(10, 12, 0.5, 1, 0);
        cfg.design = Design::Correlated { a: 2.0 };
        let model = DesignModel::new(&cfg, |k| {
            let mut r = rng(2);
            r.set_stream(k as u64);
            r
        })
        .unwrap();
        let alpha = gen_effects(&cfg, &model, &mut rng(0));
        assert!((model.quadratic_form(&alpha) - 5.0).abs() < 1e-10);
    }

    #[test]
    fn identity_sqrt_reduces_to_independent_draws() {
        let cfg = ScenarioConfig::new(4000, 3, 0.2, 1, 0);
        let model = DesignModel::Correlated {
            correlation: Mat::identity(3, 3),
            sqrt: Mat::identity(3, 3),
            floored: 0,
            attempts: 1,
        };
        let x = gen_design(&cfg, &model, &mut rng(4));
        for j in 0..3 {
            let (m, v) = moments(x.col_as_slice(j));
            assert!(m.abs() < 0.06 && (v - 1.0).abs() < 0.08);
        }
    }
}
