//! Data-generating process, oracle truth and the replicate study.

mod dgp;
mod study;
mod truth;

pub use dgp::{
    generate_cohort, normal_cdf, sample_censoring, sample_covariates, sample_event,
    sample_selection_treatment, DgpConfig, LinearPredictor, Weibull,
};
pub use study::{
    expand_targets, replicate_rng, run_study, summarize, ReplicateResult, SimulationSummary,
    StudyResult, SummaryRow, SUMMARY_HEADER,
};
pub use truth::{
    constant_hazard, discretized_weibull, scenario_nuisances, selection_probability,
    true_nuisances, true_values, wrong, Scenario, TRUTH_CELLS, TRUTH_STREAM,
};
