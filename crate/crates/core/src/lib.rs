//! Semiparametrically efficient data-fusion estimators of causal cumulative
//! incidence functions and restricted mean times lost, for randomized trials
//! whose control arm is augmented with external controls under competing risks.
//!
//! The crate is organised bottom-up:
//!
//! - [`survival`]: counting-process records and step-function hazard calculus.
//! - [`nuisance`]: logistic and Cox fits, and the nuisance set the estimators consume.
//! - [`estimators`]: influence values, point estimates, standard errors, variance reduction.
//! - [`simulation`]: the reference data-generating process and Monte Carlo study driver.
//! - [`oracles`]: independent brute-force checks used by tests and `cif-fusion check`.
//! - [`io`]: dataset ingestion, run configuration and report files.

pub mod error;
pub mod estimators;
pub mod io;
pub mod nuisance;
pub mod oracles;
pub mod simulation;
pub mod survival;

pub use error::{Error, Result};
pub use estimators::{
    estimate, estimate_many, influence_gamma, influence_theta, variance_reduction, ArmTarget,
    EstimateReport, Family, InfluenceVector, Mode, ReductionReport, Target,
};
pub use nuisance::{fit_nuisances, FitOptions, NuisanceSet};
pub use survival::{Arm, Cause, Cohort, CumulativeHazard, EventRecord, Population};
