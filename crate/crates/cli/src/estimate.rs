//! `explvar estimate`: load → expand → standardize → (decorrelate) → fit →
//! variance → intervals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use explvar::data::{
    self, centered_gram, centered_gram_eigenvalues, decorrelate, estimate_correlation,
    numerical_rank, Dataset, OutcomeColumn, DEFAULT_CORRELATION_FLOOR, DEFAULT_INTERACTION_CAP,
};
use explvar::estimator::{estimate_r2_ls, iterate_lambda};
use explvar::simulation::EstimatorKind;
use explvar::variance::{chi_square_interval, normal_interval, tau2_hat, var_ls, var_weighted};
use explvar::{Error, ExplainedVariationEstimate, Result, VarianceMethod};

use crate::{EstimateArgs, Format};

#[derive(Debug, Serialize, Deserialize)]
pub struct Meta {
    pub input: String,
    pub outcome: String,
    pub n: usize,
    pub p: usize,
    pub xi: f64,
    pub rank: usize,
    pub method: String,
    pub lambda0: f64,
    pub iterations: usize,
    pub interactions: bool,
    pub log_covariates: bool,
    pub seed: Option<u64>,
    pub version: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateBlock {
    pub r2: f64,
    pub r2_clamped: f64,
    pub sigma_s2: f64,
    pub sigma_eps2: f64,
    pub sigma_y2: f64,
    pub lambda_final: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VarianceBlock {
    pub method: VarianceMethod,
    /// Estimate of the variance of `√n (r̂² - r²)`.
    pub v2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IntervalBlock {
    pub level: f64,
    /// `normal` or `chi-square`.
    pub kind: String,
    pub lower: f64,
    pub upper: f64,
    pub sigma_s2: Option<(f64, f64)>,
    pub sigma_eps2: Option<(f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    pub denominator_c: f64,
    pub tr_w2_over_n: f64,
    pub tr_w2m_over_n: f64,
    pub sum_wii2_over_n: f64,
    pub tau2_hat: Option<f64>,
    pub eigenvalue_max: f64,
    pub eigenvalue_min_nonzero: f64,
    pub condition_number: f64,
    pub correlation_eigenvalues_floored: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    pub meta: Meta,
    pub estimate: EstimateBlock,
    pub variance: VarianceBlock,
    pub intervals: Vec<IntervalBlock>,
    pub diagnostics: Diagnostics,
}

fn check_request(args: &EstimateArgs) -> Result<()> {
    if args.level.is_empty() {
        return Err(Error::InvalidParameter("at least one --level is required".into()));
    }
    for &l in &args.level {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::InvalidParameter(format!("level {l} is not in (0, 1)")));
        }
    }
    if !(args.lambda0.is_finite() && args.lambda0 >= 0.0) {
        return Err(Error::InvalidParameter("--lambda0 must be non-negative".into()));
    }
    Ok(())
}

fn load(args: &EstimateArgs) -> Result<Dataset> {
    let mut d = data::load_csv(&args.input, &OutcomeColumn::Auto(args.outcome.clone()))?;
    if args.log_covariates {
        d = data::log_covariates(&d)?;
    }
    if args.interactions {
        data::expand_interactions(&d, DEFAULT_INTERACTION_CAP)
    } else {
        data::standardize(&d)
    }
}

struct Spectrum {
    max: f64,
    min_nonzero: f64,
    rank: usize,
}

fn spectrum(eigs: &[f64], n: usize, p: usize) -> Spectrum {
    let rank = numerical_rank(eigs, n, p);
    let max = eigs.first().copied().unwrap_or(0.0);
    let min_nonzero = if rank > 0 { eigs[rank - 1] } else { 0.0 };
    Spectrum { max, min_nonzero, rank }
}

/// Runs the pipeline and renders the report in the requested format.
pub fn run(args: &EstimateArgs) -> Result<String> {
    check_request(args)?;
    let d = load(args)?;
    let (n, p) = (d.n(), d.p());
    let kind: EstimatorKind = match args.method {
        Some(m) => m.into(),
        None if n > p + 1 => EstimatorKind::EeLs,
        None => EstimatorKind::EeLambda,
    };
    let vm: VarianceMethod = args.variance.into();
    if kind == EstimatorKind::TransEe && n <= p {
        return Err(Error::InvalidParameter(format!(
            "trans-ee needs n > p to estimate the covariate correlation (n = {n}, p = {p})"
        )));
    }

    let mut floored = None;
    let (est, v2, spec, tau2, chi_rank): (ExplainedVariationEstimate, f64, Spectrum, Option<f64>, Option<usize>) =
        match kind {
            EstimatorKind::EeLs => {
                let robust = match vm {
                    VarianceMethod::Robust => true,
                    VarianceMethod::NormalError => false,
                    VarianceMethod::NullCase => {
                        return Err(Error::InvalidParameter(
                            "ee-ls supports --variance normal or robust".into(),
                        ))
                    }
                };
                let (est, fit) = estimate_r2_ls(&d)?;
                let y = d.standardized_outcome()?;
                let v2 = var_ls(&est, &fit, &y, robust)?;
                let eigs = centered_gram_eigenvalues(&d)?;
                let mut spec = spectrum(&eigs, n, p);
                spec.rank = fit.rank();
                (est, v2, spec, None, Some(fit.rank()))
            }
            EstimatorKind::EeLambda | EstimatorKind::TransEe => {
                let d = if kind == EstimatorKind::TransEe {
                    let c = estimate_correlation(&d, DEFAULT_CORRELATION_FLOOR)?;
                    floored = Some(c.floored());
                    decorrelate(&d, &c)?
                } else {
                    d.clone()
                };
                let g = centered_gram(&d)?;
                let est = iterate_lambda(&d, &g, args.lambda0, args.iterations)?;
                let y = d.standardized_outcome()?;
                let v2 = var_weighted(vm, &est, &g, &y)?;
                let spec = spectrum(g.eigenvalues(), n, p);
                (est, v2, spec, Some(tau2_hat(&g, est.lambda_final)), None)
            }
        };

    let mut intervals = Vec::new();
    for &level in &args.level {
        let ci = normal_interval(&est, v2, n, level, vm)?;
        intervals.push(IntervalBlock {
            level,
            kind: "normal".into(),
            lower: ci.lower,
            upper: ci.upper,
            sigma_s2: Some(ci.sigma_s2_interval),
            sigma_eps2: Some(ci.sigma_eps2_interval),
        });
        if let Some(rank) = chi_rank {
            let (lower, upper) = chi_square_interval(est.r2, n, rank, level)?;
            intervals.push(IntervalBlock {
                level,
                kind: "chi-square".into(),
                lower,
                upper,
                sigma_s2: None,
                sigma_eps2: None,
            });
        }
    }

    let wd = est.weight_diagnostics;
    let report = EstimateReport {
        meta: Meta {
            input: args.input.display().to_string(),
            outcome: args.outcome.clone(),
            n,
            p,
            xi: n as f64 / p as f64,
            rank: spec.rank,
            method: kind.as_str().into(),
            lambda0: args.lambda0,
            iterations: args.iterations,
            interactions: args.interactions,
            log_covariates: args.log_covariates,
            seed: args.seed,
            version: env!("CARGO_PKG_VERSION").into(),
        },
        estimate: EstimateBlock {
            r2: est.r2,
            r2_clamped: est.r2_clamped,
            sigma_s2: est.sigma_s2,
            sigma_eps2: est.sigma_eps2,
            sigma_y2: est.sigma_y2,
            lambda_final: est.lambda_final.is_finite().then_some(est.lambda_final),
        },
        variance: VarianceBlock { method: vm, v2 },
        intervals,
        diagnostics: Diagnostics {
            denominator_c: est.denominator_c,
            tr_w2_over_n: wd.tr_w2_over_n,
            tr_w2m_over_n: wd.tr_w2m_over_n,
            sum_wii2_over_n: wd.sum_wii2_over_n,
            tau2_hat: tau2,
            eigenvalue_max: spec.max,
            eigenvalue_min_nonzero: spec.min_nonzero,
            condition_number: if spec.min_nonzero > 0.0 { spec.max / spec.min_nonzero } else { f64::INFINITY },
            correlation_eigenvalues_floored: floored,
        },
    };
    render(&report, args.format)
}

fn render(r: &EstimateReport, format: Format) -> Result<String> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(r)
                .map_err(|e| Error::InvalidParameter(format!("cannot serialize report: {e}")))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Csv(e.to_string());
            w.write_record([
                "method", "variance", "n", "p", "r2", "sigma_s2", "sigma_eps2", "lambda_final", "v2", "level",
                "interval", "lower", "upper",
            ])
            .map_err(csv_err)?;
            for ci in &r.intervals {
                w.write_record([
                    r.meta.method.clone(),
                    r.variance.method.to_string(),
                    r.meta.n.to_string(),
                    r.meta.p.to_string(),
                    r.estimate.r2.to_string(),
                    r.estimate.sigma_s2.to_string(),
                    r.estimate.sigma_eps2.to_string(),
                    r.estimate.lambda_final.map(|v| v.to_string()).unwrap_or_default(),
                    r.variance.v2.to_string(),
                    ci.level.to_string(),
                    ci.kind.clone(),
                    ci.lower.to_string(),
                    ci.upper.to_string(),
                ])
                .map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
        }
        Format::Text => {
            let mut s = String::new();
            let m = &r.meta;
            let e = &r.estimate;
            let _ = writeln!(s, "{}  n = {}  p = {}  rank = {}  xi = {:.4}", m.method, m.n, m.p, m.rank, m.xi);
            let _ = writeln!(
                s,
                "r2 = {:.4} (clamped {:.4})  sigma_s2 = {:.4}  sigma_eps2 = {:.4}",
                e.r2, e.r2_clamped, e.sigma_s2, e.sigma_eps2
            );
            if let Some(l) = e.lambda_final {
                let _ = writeln!(s, "lambda_final = {l:.4}");
            }
            let _ = writeln!(s, "v2 ({}) = {:.4}", r.variance.method, r.variance.v2);
            for ci in &r.intervals {
                let _ = writeln!(s, "{:>5.1}% {:<10} [{:.4}, {:.4}]", 100.0 * ci.level, ci.kind, ci.lower, ci.upper);
            }
            Ok(s)
        }
    }
}
