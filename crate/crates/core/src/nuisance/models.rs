//! Evaluation interfaces shared by fitted and injected nuisance functions.

use std::fmt::Debug;

use super::cox::CoxFit;
use super::logistic::{expit, LogisticFit};
use crate::survival::CumulativeHazard;

/// A conditional cumulative hazard `x ↦ A(·|x)`.
pub trait HazardModel: Send + Sync + Debug {
    /// The hazard at covariates `x`, restricted to jumps at times `<= horizon`.
    /// Jumps must lie in `[0, 1]`.
    fn cumulative_hazard(&self, x: &[f64], horizon: f64) -> CumulativeHazard;
}

/// A conditional probability `x ↦ P(· = 1 | x)`.
pub trait ProbabilityModel: Send + Sync + Debug {
    fn probability(&self, x: &[f64]) -> f64;
}

impl HazardModel for CoxFit {
    fn cumulative_hazard(&self, x: &[f64], horizon: f64) -> CumulativeHazard {
        self.predict_upto(x, true, horizon)
            .expect("clamped jumps are always valid")
    }
}

/// Covariate-free hazard, e.g. a Nelson–Aalen estimate.
impl HazardModel for CumulativeHazard {
    fn cumulative_hazard(&self, _x: &[f64], horizon: f64) -> CumulativeHazard {
        self.truncate(horizon)
    }
}

/// Proportional hazards with a fixed baseline: each jump is `1 − exp(−ΔΛ₀·exp(b₀ + bᵀx))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalHazard {
    pub times: Vec<f64>,
    pub baseline: Vec<f64>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl HazardModel for ProportionalHazard {
    fn cumulative_hazard(&self, x: &[f64], horizon: f64) -> CumulativeHazard {
        let lp = self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>();
        let risk = lp.exp();
        let k = self.times.partition_point(|&t| t <= horizon);
        let jumps = self.baseline[..k]
            .iter()
            .map(|&d| -(-d * risk).exp_m1())
            .collect();
        CumulativeHazard::from_parts_unchecked(self.times[..k].to_vec(), jumps)
    }
}

impl ProbabilityModel for LogisticFit {
    fn probability(&self, x: &[f64]) -> f64 {
        self.predict(x)
    }
}

/// A covariate-free probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantProbability(pub f64);

impl ProbabilityModel for ConstantProbability {
    fn probability(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

/// `expit(b₀ + bᵀx)` without the clamping applied to fitted models.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbability {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl ProbabilityModel for LogisticProbability {
    fn probability(&self, x: &[f64]) -> f64 {
        expit(
            self.intercept
                + self
                    .coefficients
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum::<f64>(),
        )
    }
}
