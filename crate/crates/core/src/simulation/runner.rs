//! Replicate loop and report aggregation.

use std::io::Write;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Design, EstimatorKind, IntervalKind, MethodSpec, ScenarioConfig};
use super::generate::{gen_design, gen_outcome, DesignModel};
use crate::data::{
    centered_gram, decorrelate, estimate_correlation, standardize, Dataset, SpectralGram,
    DEFAULT_CORRELATION_FLOOR,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_r2_ls, iterate_lambda, ExplainedVariationEstimate, LeastSquaresFit};
use crate::linalg::compensated_sum;
use crate::variance::{chi_square_interval, normal_interval, var_ls, var_weighted, VarianceMethod};

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Random stream for replicate `index`: the scenario seed selects the key,
/// the index selects the stream, so draws do not depend on scheduling.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Streams for the scenario-level correlation matrix, counted down from the
/// top of the stream space so they never meet a replicate stream.
fn design_rng(seed: u64, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - attempt as u64);
    rng
}

/// Result of one method on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    /// Raw point estimate.
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    /// Estimated variance of the point estimate, `v²/n`; absent for the
    /// chi-square interval.
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub index: usize,
    /// One entry per configured method, in order.
    pub methods: Vec<MethodOutcome>,
}

struct Weighted {
    est: ExplainedVariationEstimate,
    gram: SpectralGram,
    y: Vec<f64>,
}

fn fit_weighted(d: &Dataset, cfg: &ScenarioConfig) -> Result<Weighted> {
    let gram = centered_gram(d)?;
    let est = iterate_lambda(d, &gram, cfg.lambda0, cfg.iterations)?;
    let y = d.standardized_outcome()?;
    Ok(Weighted { est, gram, y })
}

/// Per-replicate fits, computed on first use.
struct Fits<'a> {
    cfg: &'a ScenarioConfig,
    data: Dataset,
    lambda: Option<Weighted>,
    trans: Option<Weighted>,
    ls: Option<(ExplainedVariationEstimate, LeastSquaresFit, Vec<f64>)>,
}

impl<'a> Fits<'a> {
    fn weighted(&mut self, kind: EstimatorKind) -> Result<&Weighted> {
        let slot = match kind {
            EstimatorKind::EeLambda => &mut self.lambda,
            EstimatorKind::TransEe => &mut self.trans,
            EstimatorKind::EeLs => unreachable!("least squares is not a spectral weight"),
        };
        if slot.is_none() {
            let fitted = if kind == EstimatorKind::TransEe {
                let c = estimate_correlation(&self.data, DEFAULT_CORRELATION_FLOOR)?;
                fit_weighted(&decorrelate(&self.data, &c)?, self.cfg)?
            } else {
                fit_weighted(&self.data, self.cfg)?
            };
            *slot = Some(fitted);
        }
        Ok(slot.as_ref().expect("filled above"))
    }

    fn least_squares(&mut self) -> Result<&(ExplainedVariationEstimate, LeastSquaresFit, Vec<f64>)> {
        if self.ls.is_none() {
            let (est, fit) = estimate_r2_ls(&self.data)?;
            let y = self.data.standardized_outcome()?;
            self.ls = Some((est, fit, y));
        }
        Ok(self.ls.as_ref().expect("filled above"))
    }

    fn run(&mut self, m: &MethodSpec) -> Result<MethodOutcome> {
        let r2_true = self.cfg.r2_true;
        let (estimate, lower, upper, variance) = match (m.estimator, m.interval) {
            (EstimatorKind::EeLs, IntervalKind::ChiSquare) => {
                let (est, fit, _) = self.least_squares()?;
                let (lo, hi) = chi_square_interval(est.r2, fit.n(), fit.rank(), m.level)?;
                (est.r2, lo, hi, None)
            }
            (EstimatorKind::EeLs, IntervalKind::Normal(vm)) => {
                let (est, fit, y) = self.least_squares()?;
                let robust = match vm {
                    VarianceMethod::Robust => true,
                    VarianceMethod::NormalError => false,
                    VarianceMethod::NullCase => {
                        return Err(Error::InvalidParameter(
                            "least squares has no null-case variance".into(),
                        ))
                    }
                };
                let v2 = var_ls(est, fit, y, robust)?;
                let ci = normal_interval(est, v2, fit.n(), m.level, vm)?;
                (est.r2, ci.lower, ci.upper, Some(v2 / fit.n() as f64))
            }
            (kind, IntervalKind::Normal(vm)) => {
                let w = self.weighted(kind)?;
                let v2 = var_weighted(vm, &w.est, &w.gram, &w.y)?;
                let n = w.gram.n();
                let ci = normal_interval(&w.est, v2, n, m.level, vm)?;
                (w.est.r2, ci.lower, ci.upper, Some(v2 / n as f64))
            }
            (_, IntervalKind::ChiSquare) => {
                return Err(Error::InvalidParameter("the chi-square interval needs ee-ls".into()))
            }
        };
        Ok(MethodOutcome {
            estimate,
            lower,
            upper,
            covered: lower <= r2_true && r2_true <= upper,
            variance,
        })
    }
}

/// Generates replicate `index` and runs every configured method on it.
pub fn run_replicate(cfg: &ScenarioConfig, model: &DesignModel, index: usize) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(cfg.seed, index);
    let x = gen_design(cfg, model, &mut rng);
    let (y, _) = gen_outcome(&x, cfg, model, &mut rng);
    let data = standardize(&Dataset::new(y, x, None)?)?;
    let mut fits = Fits { cfg, data, lambda: None, trans: None, ls: None };
    let methods = cfg
        .methods
        .iter()
        .map(|m| fits.run(m))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicateOutcome { index, methods })
}

/// Builds the scenario's design model from its seed.
pub fn design_model(cfg: &ScenarioConfig) -> Result<DesignModel> {
    DesignModel::new(cfg, |attempt| design_rng(cfg.seed, attempt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub label: String,
    pub method: MethodSpec,
    /// Replicates that entered the aggregates.
    pub successes: usize,
    pub coverage_rate: f64,
    pub avg_ci_length: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub mse: f64,
    /// Mean of the per-replicate variance estimates `v²/n`, comparable with
    /// `empirical_variance`.
    pub mean_variance_estimate: Option<f64>,
    /// Variance of the point estimates across replicates (denominator = count).
    pub empirical_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub config: ScenarioConfig,
    pub replicate_failures: usize,
    pub methods: Vec<MethodReport>,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    method: &'a str,
    estimator: &'a str,
    interval: String,
    level: f64,
    n: usize,
    p: usize,
    r2_true: f64,
    replicates: usize,
    successes: usize,
    replicate_failures: usize,
    coverage_rate: f64,
    avg_ci_length: f64,
    mean_estimate: f64,
    bias: f64,
    mse: f64,
    empirical_variance: f64,
    mean_variance_estimate: Option<f64>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize report: {e}")))
    }

    /// One row per method.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let cfg = &self.config;
        for m in &self.methods {
            w.serialize(CsvRow {
                scenario: &self.name,
                method: &m.label,
                estimator: m.method.estimator.as_str(),
                interval: m.method.interval.to_string(),
                level: m.method.level,
                n: cfg.n,
                p: cfg.p,
                r2_true: cfg.r2_true,
                replicates: cfg.replicates,
                successes: m.successes,
                replicate_failures: self.replicate_failures,
                coverage_rate: m.coverage_rate,
                avg_ci_length: m.avg_ci_length,
                mean_estimate: m.mean_estimate,
                bias: m.bias,
                mse: m.mse,
                empirical_variance: m.empirical_variance,
                mean_variance_estimate: m.mean_variance_estimate,
            })
            .map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn method(&self, label: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.label == label)
    }
}

/// Aggregates replicate outcomes in index order.
pub fn aggregate(cfg: &ScenarioConfig, outcomes: &[ReplicateOutcome]) -> Vec<MethodReport> {
    let k = outcomes.len() as f64;
    cfg.methods
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let rows = || outcomes.iter().map(move |o| &o.methods[j]);
            let mean = |f: &dyn Fn(&MethodOutcome) -> f64| compensated_sum(rows().map(f)) / k;
            let mean_estimate = mean(&|o| o.estimate);
            let variance = if rows().all(|o| o.variance.is_some()) {
                Some(mean(&|o| o.variance.unwrap_or(f64::NAN)))
            } else {
                None
            };
            MethodReport {
                label: spec.label(),
                method: *spec,
                successes: outcomes.len(),
                coverage_rate: mean(&|o| if o.covered { 1.0 } else { 0.0 }),
                avg_ci_length: mean(&|o| o.upper - o.lower),
                mean_estimate,
                bias: mean_estimate - cfg.r2_true,
                mse: mean(&|o| (o.estimate - cfg.r2_true).powi(2)),
                mean_variance_estimate: variance,
                empirical_variance: mean(&|o| (o.estimate - mean_estimate).powi(2)),
            }
        })
        .collect()
}

/// Runs a scenario on the global rayon pool.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    run_scenario_with_threads(cfg, None)
}

/// Runs a scenario with `threads` workers (`None` = rayon's default). The
/// report does not depend on the thread count.
pub fn run_scenario_with_threads(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<ScenarioReport> {
    cfg.validate()?;
    let model = design_model(cfg)?;
    let work = || -> Vec<Result<ReplicateOutcome>> {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|i| run_replicate(cfg, &model, i))
            .collect()
    };
    let results = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut outcomes = Vec::with_capacity(results.len());
    let mut failures = 0usize;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                warn!("scenario '{}': replicate {i} failed: {e}", cfg.name);
                failures += 1;
            }
        }
    }
    if failures as f64 > MAX_FAILURE_FRACTION * cfg.replicates as f64 || outcomes.is_empty() {
        return Err(Error::TooManyFailures { failures, replicates: cfg.replicates });
    }

    let mut notes = Vec::new();
    if let (Design::Correlated { .. }, DesignModel::Correlated { floored, attempts, .. }) = (cfg.design, &model) {
        notes.push(format!(
            "correlation matrix repaired by flooring {floored} negative eigenvalue(s) at zero \
             and renormalizing the diagonal (draw {attempts} of at most 10)"
        ));
    }
    Ok(ScenarioReport {
        name: cfg.name.clone(),
        config: cfg.clone(),
        replicate_failures: failures,
        methods: aggregate(cfg, &outcomes),
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(replicates: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(40, 30, 0.5, replicates, 99);
        cfg.methods = vec![
            "ee-lambda:robust:0.9".parse().unwrap(),
            "ee-lambda:robust:0.95".parse().unwrap(),
            "ee-lambda:robust:0.99".parse().unwrap(),
            "ee-lambda:normal:0.95".parse().unwrap(),
            "ee-ls:robust:0.95".parse().unwrap(),
            "ee-ls:chi-square:0.95".parse().unwrap(),
        ];
        cfg
    }

    #[test]
    fn single_replicate_report_is_that_replicate() {
        let cfg = small_cfg(1);
        let report = run_scenario_with_threads(&cfg, Some(1)).unwrap();
        let rep = run_replicate(&cfg, &design_model(&cfg).unwrap(), 0).unwrap();
        for (m, o) in report.methods.iter().zip(&rep.methods) {
            assert_eq!(m.mean_estimate, o.estimate);
            assert_eq!(m.avg_ci_length, o.upper - o.lower);
            assert_eq!(m.coverage_rate, if o.covered { 1.0 } else { 0.0 });
            assert_eq!(m.empirical_variance, 0.0);
        }
        assert_eq!(report.to_csv().unwrap().lines().count(), 1 + cfg.methods.len());
    }

    #[test]
    fn thread_count_does_not_change_report() {
        let cfg = small_cfg(12);
        let a = run_scenario_with_threads(&cfg, Some(1)).unwrap();
        let b = run_scenario_with_threads(&cfg, Some(3)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    }

    #[test]
    fn level_monotone_and_mse_identity() {
        let cfg = small_cfg(30);
        let r = run_scenario_with_threads(&cfg, Some(2)).unwrap();
        assert!(r.methods[2].coverage_rate >= r.methods[1].coverage_rate);
        assert!(r.methods[1].coverage_rate >= r.methods[0].coverage_rate);
        for m in &r.methods {
            assert!((m.mse - m.bias.powi(2) - m.empirical_variance).abs() <= 1e-10);
            assert!(m.mse >= m.bias.powi(2));
            assert!((0.0..=1.0).contains(&m.coverage_rate));
        }
        assert!(r.methods[5].mean_variance_estimate.is_none());
        assert!(r.methods[0].mean_variance_estimate.unwrap() > 0.0);
    }

    #[test]
    fn replicate_failures_are_counted() {
        // n <= p + 1 makes least squares fail on every replicate
        let mut cfg = small_cfg(3);
        cfg.p = 45;
        match run_scenario_with_threads(&cfg, Some(1)) {
            Err(Error::TooManyFailures { failures, replicates }) => assert_eq!((failures, replicates), (3, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn correlated_scenario_reports_repair() {
        let mut cfg = small_cfg(2);
        cfg.p = 10;
        cfg.design = Design::Correlated { a: 2.0 };
        cfg.methods.push("trans-ee:robust:0.95".parse().unwrap());
        let r = run_scenario_with_threads(&cfg, Some(1)).unwrap();
        assert_eq!(r.notes.len(), 1);
        let json = r.to_json().unwrap();
        let back: ScenarioReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_json().unwrap(), json);
    }
}
