//! Nuisance functions: logistic and Cox fits and the set the estimators consume.

mod cox;
mod logistic;
mod models;
mod profile;
mod set;

pub use cox::{breslow_baseline, fit_cox, fit_cox_columns, CoxFit};
pub use logistic::{expit, fit_logistic, LogisticFit};
pub use models::{
    ConstantProbability, HazardModel, LogisticProbability, ProbabilityModel, ProportionalHazard,
};
pub(crate) use profile::{cause_index, Integrator};
pub use profile::{derived_quantities, DerivedQuantities, Profile, ProfileKind};
pub use set::{fit_nuisances, nelson_aalen_nuisances, FitDiagnostic, FitOptions, NuisanceSet, WeightCapRule};
