//! Scenario description and its flat `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! name = indep-200-100
//! n = 200
//! p = 100
//! r2_true = 0.5
//! covariate_dist = normal(1)      # or chisq1
//! error_dist = normal(3)          # or exponential
//! design = independent            # or correlated(2)
//! effect_pattern = half-constant  # or normal-random
//! replicates = 500
//! seed = 42
//! methods = ee-lambda:robust:0.95, ee-ls:chi-square:0.95
//! ```
//!
//! `lambda0` (default 0.1) and `iterations` (default 5) are optional, as is
//! `name`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variance::VarianceMethod;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateDist {
    /// `sign(u)|u|^γ` with `u ~ N(0, 1)`.
    NormalPower { gamma: f64 },
    /// `u²`.
    ChiSquare1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorDist {
    NormalPower { gamma: f64 },
    /// `Exp(1) - 1`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    Independent,
    /// Correlation from `|(AB)ᵗ(AB)|` with `A ~ N(a, 1)` entries.
    Correlated { a: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectPattern {
    /// Equal effects on the first `⌊p/2⌋` covariates, zero elsewhere.
    HalfConstant,
    /// I.i.d. normal effects rescaled to the target signal variance.
    NormalRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Spectral weight with iterated `λ`.
    EeLambda,
    /// Least-squares weight.
    EeLs,
    /// Spectral weight after decorrelating with the sample correlation.
    TransEe,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::EeLambda => "ee-lambda",
            EstimatorKind::EeLs => "ee-ls",
            EstimatorKind::TransEe => "trans-ee",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ee-lambda" => Ok(EstimatorKind::EeLambda),
            "ee-ls" => Ok(EstimatorKind::EeLs),
            "trans-ee" => Ok(EstimatorKind::TransEe),
            other => Err(Error::InvalidParameter(format!(
                "unknown estimator '{other}' (expected ee-lambda, ee-ls or trans-ee)"
            ))),
        }
    }
}

/// How the interval for a method is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    /// Normal approximation with the given variance estimate.
    Normal(VarianceMethod),
    /// Chi-square pivot; least squares only.
    ChiSquare,
}

impl fmt::Display for IntervalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntervalKind::Normal(v) => write!(f, "{v}"),
            IntervalKind::ChiSquare => f.write_str("chi-square"),
        }
    }
}

impl FromStr for IntervalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "chi-square" {
            Ok(IntervalKind::ChiSquare)
        } else {
            s.parse().map(IntervalKind::Normal)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub estimator: EstimatorKind,
    pub interval: IntervalKind,
    pub level: f64,
}

impl MethodSpec {
    pub fn new(estimator: EstimatorKind, interval: IntervalKind, level: f64) -> Result<Self> {
        let m = MethodSpec { estimator, interval, level };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "method {self}: level must lie in (0, 1)"
            )));
        }
        match (self.estimator, self.interval) {
            (EstimatorKind::EeLs, IntervalKind::Normal(VarianceMethod::NullCase)) => Err(
                Error::Config(format!("method {self}: least squares has no null-case variance")),
            ),
            (EstimatorKind::EeLambda | EstimatorKind::TransEe, IntervalKind::ChiSquare) => Err(
                Error::Config(format!("method {self}: the chi-square interval needs ee-ls")),
            ),
            _ => Ok(()),
        }
    }

    /// `estimator:interval:level`, the same form the config file uses.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.estimator, self.interval, self.level)
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || Error::Config(format!("malformed method '{s}' (expected estimator:interval:level)"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let estimator = parts[0].parse().map_err(|_| bad())?;
        let interval = parts[1].parse().map_err(|_| bad())?;
        let level = parts[2].parse().map_err(|_| bad())?;
        MethodSpec::new(estimator, interval, level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub r2_true: f64,
    pub covariate_dist: CovariateDist,
    pub error_dist: ErrorDist,
    pub design: Design,
    pub effect_pattern: EffectPattern,
    pub replicates: usize,
    pub seed: u64,
    pub methods: Vec<MethodSpec>,
    pub lambda0: f64,
    pub iterations: usize,
}

impl ScenarioConfig {
    /// Normal covariates and errors, independent design, half-constant
    /// effects, the default `λ` schedule, no methods.
    pub fn new(n: usize, p: usize, r2_true: f64, replicates: usize, seed: u64) -> Self {
        ScenarioConfig {
            name: format!("n{n}-p{p}-r{r2_true}"),
            n,
            p,
            r2_true,
            covariate_dist: CovariateDist::NormalPower { gamma: 1.0 },
            error_dist: ErrorDist::NormalPower { gamma: 1.0 },
            design: Design::Independent,
            effect_pattern: EffectPattern::HalfConstant,
            replicates,
            seed,
            methods: Vec::new(),
            lambda0: 0.1,
            iterations: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < crate::data::MIN_ROWS {
            return Err(Error::Config(format!("n must be at least {}", crate::data::MIN_ROWS)));
        }
        if self.p == 0 {
            return Err(Error::Config("p must be positive".into()));
        }
        if !(self.r2_true >= 0.0 && self.r2_true < 1.0) {
            return Err(Error::Config("r2_true must lie in [0, 1)".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        if let CovariateDist::NormalPower { gamma } = self.covariate_dist {
            check_gamma(gamma, "covariate_dist")?;
        }
        if let ErrorDist::NormalPower { gamma } = self.error_dist {
            check_gamma(gamma, "error_dist")?;
        }
        if let Design::Correlated { a } = self.design {
            if !a.is_finite() {
                return Err(Error::Config("design: correlated(a) needs a finite a".into()));
            }
        }
        if !(self.lambda0.is_finite() && self.lambda0 >= 0.0) {
            return Err(Error::Config("lambda0 must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.parse()
    }

    /// Renders the config in the text format accepted by [`FromStr`].
    pub fn to_text(&self) -> String {
        let methods: Vec<String> = self.methods.iter().map(|m| m.to_string()).collect();
        format!(
            "name = {}\nn = {}\np = {}\nr2_true = {}\ncovariate_dist = {}\nerror_dist = {}\n\
             design = {}\neffect_pattern = {}\nreplicates = {}\nseed = {}\nmethods = {}\n\
             lambda0 = {}\niterations = {}\n",
            self.name,
            self.n,
            self.p,
            self.r2_true,
            fmt_covariate(self.covariate_dist),
            fmt_error(self.error_dist),
            match self.design {
                Design::Independent => "independent".to_string(),
                Design::Correlated { a } => format!("correlated({a})"),
            },
            match self.effect_pattern {
                EffectPattern::HalfConstant => "half-constant",
                EffectPattern::NormalRandom => "normal-random",
            },
            self.replicates,
            self.seed,
            methods.join(", "),
            self.lambda0,
            self.iterations,
        )
    }
}

fn check_gamma(gamma: f64, key: &str) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{key}: power exponent must be positive, got {gamma}")))
    }
}

fn fmt_covariate(c: CovariateDist) -> String {
    match c {
        CovariateDist::NormalPower { gamma } => format!("normal({gamma})"),
        CovariateDist::ChiSquare1 => "chisq1".into(),
    }
}

fn fmt_error(e: ErrorDist) -> String {
    match e {
        ErrorDist::NormalPower { gamma } => format!("normal({gamma})"),
        ErrorDist::Exponential => "exponential".into(),
    }
}

/// `name(arg)` → `(name, Some(arg))`, `name` → `(name, None)`.
fn split_call(v: &str) -> Option<(&str, Option<&str>)> {
    match v.find('(') {
        None => Some((v, None)),
        Some(open) => {
            let inner = v[open + 1..].strip_suffix(')')?;
            Some((v[..open].trim(), Some(inner.trim())))
        }
    }
}

fn parse_power(key: &str, value: &str) -> Result<Option<f64>> {
    let bad = || Error::Config(format!("{key}: cannot parse '{value}'"));
    let (head, arg) = split_call(value).ok_or_else(bad)?;
    if head != "normal" {
        return Ok(None);
    }
    match arg {
        None => Ok(Some(1.0)),
        Some(a) => a.parse().map(Some).map_err(|_| bad()),
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

const KEYS: [&str; 13] = [
    "name",
    "n",
    "p",
    "r2_true",
    "covariate_dist",
    "error_dist",
    "design",
    "effect_pattern",
    "replicates",
    "seed",
    "methods",
    "lambda0",
    "iterations",
];

impl FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key '{key}' on line {}", lineno + 1)));
            }
            if kv.insert(key, value).is_some() {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
        }
        let required = |key: &str| {
            kv.get(key)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing key '{key}'")))
        };

        let n: usize = parse_num("n", required("n")?)?;
        let p: usize = parse_num("p", required("p")?)?;
        let r2_true: f64 = parse_num("r2_true", required("r2_true")?)?;
        let replicates = parse_num("replicates", required("replicates")?)?;
        let seed = parse_num("seed", required("seed")?)?;

        let cov = required("covariate_dist")?;
        let covariate_dist = match parse_power("covariate_dist", cov)? {
            Some(gamma) => CovariateDist::NormalPower { gamma },
            None if cov == "chisq1" => CovariateDist::ChiSquare1,
            None => return Err(Error::Config(format!("covariate_dist: cannot parse '{cov}'"))),
        };
        let err = required("error_dist")?;
        let error_dist = match parse_power("error_dist", err)? {
            Some(gamma) => ErrorDist::NormalPower { gamma },
            None if err == "exponential" => ErrorDist::Exponential,
            None => return Err(Error::Config(format!("error_dist: cannot parse '{err}'"))),
        };
        let des = required("design")?;
        let design = match split_call(des) {
            Some(("independent", None)) => Design::Independent,
            Some(("correlated", Some(a))) => Design::Correlated { a: parse_num("design", a)? },
            _ => return Err(Error::Config(format!("design: cannot parse '{des}'"))),
        };
        let eff = required("effect_pattern")?;
        let effect_pattern = match eff {
            "half-constant" => EffectPattern::HalfConstant,
            "normal-random" => EffectPattern::NormalRandom,
            _ => return Err(Error::Config(format!("effect_pattern: cannot parse '{eff}'"))),
        };
        let methods = required("methods")?
            .split(',')
            .map(|m| m.trim().parse::<MethodSpec>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Config(format!("methods: {e}")))?;

        let mut cfg = ScenarioConfig::new(n, p, r2_true, replicates, seed);
        if let Some(name) = kv.get("name") {
            cfg.name = name.to_string();
        }
        cfg.covariate_dist = covariate_dist;
        cfg.error_dist = error_dist;
        cfg.design = design;
        cfg.effect_pattern = effect_pattern;
        cfg.methods = methods;
        if let Some(v) = kv.get("lambda0") {
            cfg.lambda0 = parse_num("lambda0", v)?;
        }
        if let Some(v) = kv.get("iterations") {
            cfg.iterations = parse_num("iterations", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
