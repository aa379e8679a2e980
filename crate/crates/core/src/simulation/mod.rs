//! Monte-Carlo harness: data generators, the replicate runner and the
//! coverage / length / bias / MSE report.

mod config;
mod generate;
mod runner;

pub use config::{
    CovariateDist, Design, EffectPattern, ErrorDist, EstimatorKind, IntervalKind, MethodSpec,
    ScenarioConfig,
};
pub use generate::{
    gen_design, gen_effects, gen_outcome, power_transform, signal_noise, DesignModel,
    MAX_CORRELATION_ATTEMPTS, TOTAL_VARIANCE,
};
pub use runner::{
    aggregate, design_model, replicate_rng, run_replicate, run_scenario, run_scenario_with_threads,
    MethodOutcome, MethodReport, ReplicateOutcome, ScenarioReport, MAX_FAILURE_FRACTION,
};
