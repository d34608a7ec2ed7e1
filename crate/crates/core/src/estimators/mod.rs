//! Influence-function based estimators of cumulative incidences and restricted
//! mean times lost, their standard errors, and the variance-reduction estimate.
//!
//! Every estimate is the sample mean of per-subject influence values `ℓ̂(O)`:
//! a plug-in g-formula term plus martingale corrections with inverse weights
//! `1/H(s−)` capped at [`NuisanceSet::weight_cap`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::nuisance::{cause_index, Integrator, NuisanceSet, Profile, ProfileKind};
use crate::survival::{Arm, Cause, Cohort, EventRecord};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

/// Cumulative incidence `θ` or restricted mean time lost `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Theta,
    Gamma,
}

/// Fusion (trial plus external controls) or trial-only estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fusion,
    RctOnly,
}

impl Mode {
    /// `+` for fusion and `-` for trial-only, as in the summary tables.
    pub fn symbol(self) -> &'static str {
        match self {
            Mode::Fusion => "+",
            Mode::RctOnly => "-",
        }
    }
}

/// Arm-specific parameter or the treated-minus-control effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArmTarget {
    Control,
    Treated,
    Effect,
}

/// One estimand at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub family: Family,
    pub cause: Cause,
    pub arm: ArmTarget,
    pub time: f64,
    pub mode: Mode,
}

impl Target {
    pub fn theta(cause: Cause, arm: ArmTarget, time: f64, mode: Mode) -> Self {
        Self {
            family: Family::Theta,
            cause,
            arm,
            time,
            mode,
        }
    }

    pub fn gamma(cause: Cause, arm: ArmTarget, time: f64, mode: Mode) -> Self {
        Self {
            family: Family::Gamma,
            ..Self::theta(cause, arm, time, mode)
        }
    }

    /// Label without time or mode, e.g. `theta_1(0)` or `gamma_2{t}`.
    pub fn estimand(&self) -> String {
        let f = match self.family {
            Family::Theta => "theta",
            Family::Gamma => "gamma",
        };
        let arm = match self.arm {
            ArmTarget::Control => "(0)",
            ArmTarget::Treated => "(1)",
            ArmTarget::Effect => "{t}",
        };
        format!("{f}_{}{arm}", self.cause.code())
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at t = {} ({})", self.estimand(), self.time, self.mode.symbol())
    }
}

/// Uncentered influence values, one per cohort record in cohort order.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceVector {
    pub target: Target,
    pub values: Vec<f64>,
}

impl InfluenceVector {
    /// Mean in index order; this is the point estimate.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `ℓ̂ − (D/α̂)·θ̂`, the centered influence function.
    pub fn centered(&self, cohort: &Cohort, alpha_hat: f64, estimate: f64) -> Vec<f64> {
        self.values
            .iter()
            .zip(cohort.records())
            .map(|(v, r)| v - r.d() / alpha_hat * estimate)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub target: Target,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_used: usize,
    pub influence: InfluenceVector,
}

impl EstimateReport {
    /// Builds the report from influence values: SE is `√(mean φ²)/√n`.
    pub fn from_influence(cohort: &Cohort, alpha_hat: f64, influence: InfluenceVector) -> Self {
        let n = influence.values.len();
        let estimate = influence.mean();
        let centered = influence.centered(cohort, alpha_hat, estimate);
        let second_moment = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let std_error = second_moment.sqrt() / (n as f64).sqrt();
        Self {
            target: influence.target,
            estimate,
            std_error,
            ci_low: estimate - Z_95 * std_error,
            ci_high: estimate + Z_95 * std_error,
            n_used: n,
            influence,
        }
    }

    /// Variance of the centered influence function, `mean φ²`.
    pub fn influence_variance(&self) -> f64 {
        self.std_error * self.std_error * self.n_used as f64
    }
}

/// Plug-in estimate of the variance reduction from fusing external controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionReport {
    pub time: f64,
    /// Absolute reduction in the variance of the influence function.
    pub reduction_estimate: f64,
    /// Variance of the trial-only influence function.
    pub rct_only_variance: f64,
    /// `reduction_estimate / rct_only_variance`.
    pub relative: f64,
}

/// An arm-level influence computation: one family, cause, time and profile kind.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Spec {
    family: Family,
    cause: usize,
    time: f64,
    kind: ProfileKind,
}

const KINDS: [ProfileKind; 3] = [
    ProfileKind::ControlFusion,
    ProfileKind::ControlRctOnly,
    ProfileKind::Treated,
];

fn control_kind(mode: Mode) -> ProfileKind {
    match mode {
        Mode::Fusion => ProfileKind::ControlFusion,
        Mode::RctOnly => ProfileKind::ControlRctOnly,
    }
}

/// Coefficients of the (cause-1 martingale, cause-2 martingale, plug-in) terms.
fn coefficients(
    kind: ProfileKind,
    rec: &EventRecord,
    ns: &NuisanceSet,
) -> Result<(f64, f64, f64)> {
    let a = ns.alpha_hat;
    let d = rec.d();
    let treated = if rec.arm() == Arm::Treated { 1.0 } else { 0.0 };
    Ok(match kind {
        ProfileKind::ControlFusion => {
            let pi = if rec.is_control() {
                ns.pi()?.probability(&rec.covariates)
            } else {
                0.0
            };
            ((1.0 - treated) * pi / a, d * (1.0 - treated) / a, d / a)
        }
        ProfileKind::ControlRctOnly => {
            let c = d * (1.0 - treated) / a;
            (c, c, d / a)
        }
        ProfileKind::Treated => {
            let c = d * treated / a;
            (c, c, d / a)
        }
    })
}

fn record_values(
    rec: &EventRecord,
    ns: &NuisanceSet,
    specs: &[Spec],
    horizons: &[Option<f64>; 3],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; specs.len()];
    for (kind, horizon) in KINDS.iter().zip(horizons) {
        let Some(horizon) = *horizon else { continue };
        let (c_main, c_comp, c_plug) = coefficients(*kind, rec, ns)?;
        if c_main == 0.0 && c_comp == 0.0 && c_plug == 0.0 {
            continue;
        }
        let with_weights = c_main != 0.0 || c_comp != 0.0;
        let profile = Profile::build(ns, *kind, &rec.covariates, horizon, with_weights)?;
        for (slot, spec) in out.iter_mut().zip(specs) {
            if spec.kind != *kind {
                continue;
            }
            let (j, t) = (spec.cause, spec.time);
            let gamma = spec.family == Family::Gamma;
            let mut v = c_plug
                * if gamma {
                    profile.cif_area(j, t)
                } else {
                    profile.cif(j, t)
                };
            for (c, integrator) in [(c_main, Integrator::Main), (c_comp, Integrator::Comp)] {
                if c != 0.0 {
                    v += c * profile.martingale(
                        integrator, &rec.id, rec.time, rec.cause, j, t, gamma,
                    )?;
                }
            }
            *slot = v;
        }
    }
    Ok(out)
}

/// Influence values for arm-level specs, as `values[spec][record]`.
fn influence_matrix(cohort: &Cohort, ns: &NuisanceSet, specs: &[Spec]) -> Result<Vec<Vec<f64>>> {
    for s in specs {
        if !(s.time >= 0.0 && s.time <= cohort.tau()) {
            return Err(Error::Config(format!(
                "target time {} outside [0, tau = {}]",
                s.time,
                cohort.tau()
            )));
        }
    }
    let mut horizons = [None; 3];
    for (slot, kind) in horizons.iter_mut().zip(KINDS) {
        *slot = specs
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.time)
            .reduce(f64::max);
    }
    let per_record: Vec<Vec<f64>> = cohort
        .records()
        .par_iter()
        .map(|rec| record_values(rec, ns, specs, &horizons))
        .collect::<Result<_>>()?;
    Ok((0..specs.len())
        .map(|k| per_record.iter().map(|row| row[k]).collect())
        .collect())
}

/// Influence vectors for many targets sharing one pass over the cohort.
pub fn influence_many(
    cohort: &Cohort,
    ns: &NuisanceSet,
    targets: &[Target],
) -> Result<Vec<InfluenceVector>> {
    let mut specs: Vec<Spec> = Vec::new();
    let mut index = |spec: Spec| -> usize {
        match specs.iter().position(|s| *s == spec) {
            Some(i) => i,
            None => {
                specs.push(spec);
                specs.len() - 1
            }
        }
    };
    let mut plan = Vec::with_capacity(targets.len());
    for t in targets {
        let base = Spec {
            family: t.family,
            cause: cause_index(t.cause)?,
            time: t.time,
            kind: ProfileKind::Treated,
        };
        let control = Spec {
            kind: control_kind(t.mode),
            ..base
        };
        plan.push(match t.arm {
            ArmTarget::Treated => (Some(index(base)), None),
            ArmTarget::Control => (None, Some(index(control))),
            ArmTarget::Effect => (Some(index(base)), Some(index(control))),
        });
    }
    let matrix = influence_matrix(cohort, ns, &specs)?;
    Ok(targets
        .iter()
        .zip(plan)
        .map(|(target, (treated, control))| {
            let values = match (treated, control) {
                (Some(i), None) => matrix[i].clone(),
                (None, Some(i)) => matrix[i].clone(),
                (Some(i), Some(k)) => matrix[i]
                    .iter()
                    .zip(&matrix[k])
                    .map(|(a, b)| a - b)
                    .collect(),
                (None, None) => unreachable!(),
            };
            InfluenceVector {
                target: *target,
                values,
            }
        })
        .collect())
}

fn arm_target(arm: Arm) -> ArmTarget {
    match arm {
        Arm::Control => ArmTarget::Control,
        Arm::Treated => ArmTarget::Treated,
    }
}

/// Influence values `ℓ̂_j(a,t)` for the cumulative incidence of `cause` under `arm`.
///
/// Treated-arm values only use trial data, so `mode` does not change them.
pub fn influence_theta(
    cohort: &Cohort,
    ns: &NuisanceSet,
    arm: Arm,
    cause: Cause,
    t: f64,
    mode: Mode,
) -> Result<InfluenceVector> {
    let target = Target::theta(cause, arm_target(arm), t, mode);
    Ok(influence_many(cohort, ns, &[target])?.remove(0))
}

/// Influence values `∫_0^t ℓ̂_j(a,s) ds` for the restricted mean time lost,
/// integrated exactly over the step functions.
pub fn influence_gamma(
    cohort: &Cohort,
    ns: &NuisanceSet,
    arm: Arm,
    cause: Cause,
    t: f64,
    mode: Mode,
) -> Result<InfluenceVector> {
    let target = Target::gamma(cause, arm_target(arm), t, mode);
    Ok(influence_many(cohort, ns, &[target])?.remove(0))
}

/// Point estimate, standard error and 95% Wald interval for one target.
pub fn estimate(cohort: &Cohort, ns: &NuisanceSet, target: &Target) -> Result<EstimateReport> {
    Ok(estimate_many(cohort, ns, std::slice::from_ref(target))?.remove(0))
}

pub fn estimate_many(
    cohort: &Cohort,
    ns: &NuisanceSet,
    targets: &[Target],
) -> Result<Vec<EstimateReport>> {
    Ok(influence_many(cohort, ns, targets)?
        .into_iter()
        .map(|iv| EstimateReport::from_influence(cohort, ns.alpha_hat, iv))
        .collect())
}

/// Plug-in estimate of the drop in the variance bound of `θ₁(0,t)` from fusing the
/// external controls:
/// `mean over subjects of π(1−π)/α²·Σ_{s ≤ t} (S₀S₀ᶜ)(s−)/(H₁H_·)(s−)·W₁₁(t,s)²·(1−ΔA)ΔA`.
pub fn variance_reduction(cohort: &Cohort, ns: &NuisanceSet, t: f64) -> Result<ReductionReport> {
    let pi = ns.pi()?;
    let alpha = ns.alpha_hat;
    let terms: Vec<f64> = cohort
        .records()
        .par_iter()
        .map(|rec| {
            let p = pi.probability(&rec.covariates);
            if p * (1.0 - p) == 0.0 {
                return Ok(0.0);
            }
            let profile =
                Profile::build(ns, ProfileKind::ControlFusion, &rec.covariates, t, true)?;
            Ok(p * (1.0 - p) / (alpha * alpha) * profile.reduction_integral(t, &rec.id)?)
        })
        .collect::<Result<_>>()?;
    let reduction_estimate = terms.iter().sum::<f64>() / terms.len() as f64;
    let rct = estimate(
        cohort,
        ns,
        &Target::theta(Cause::Interest, ArmTarget::Control, t, Mode::RctOnly),
    )?;
    let rct_only_variance = rct.influence_variance();
    Ok(ReductionReport {
        time: t,
        reduction_estimate,
        rct_only_variance,
        relative: if rct_only_variance > 0.0 {
            reduction_estimate / rct_only_variance
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests;
