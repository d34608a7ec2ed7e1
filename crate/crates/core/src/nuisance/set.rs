use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cox::{fit_cox_columns, CoxFit};
use super::logistic::{fit_logistic, LogisticFit};
use super::models::{ConstantProbability, HazardModel, ProbabilityModel};
use crate::error::{Error, Result};
use crate::survival::{Arm, Cause, Cohort, CumulativeHazard, EventRecord, Population};

/// Rule for the cap applied to inverse weights `1/H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightCapRule {
    /// `√n·ln(n)/5`.
    #[default]
    SqrtNLogNOver5,
    Fixed(f64),
    /// No capping.
    None,
}

impl WeightCapRule {
    pub fn cap(self, n: usize) -> f64 {
        match self {
            WeightCapRule::SqrtNLogNOver5 => {
                let n = n as f64;
                n.sqrt() * n.ln() / 5.0
            }
            WeightCapRule::Fixed(c) => c,
            WeightCapRule::None => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitOptions {
    pub weight_cap: WeightCapRule,
}

/// Convergence record for one stratum fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostic {
    pub stratum: &'static str,
    pub converged: bool,
    pub iterations: usize,
}

type Hazard = Option<Arc<dyn HazardModel>>;

/// Every nuisance function the estimators consume.
///
/// Components are optional so partially specified sets (an RCT-only cohort,
/// injected true functions) can be used; estimators report the first missing
/// component they need.
#[derive(Debug, Clone)]
pub struct NuisanceSet {
    /// Selection score `π(x) = P(D = 1 | x)`.
    pub pi: Option<Arc<dyn ProbabilityModel>>,
    /// Treatment probability `P(A = 1 | x, D = 1)`.
    pub e1: Arc<dyn ProbabilityModel>,
    /// Cause-1 hazard under control, pooled over both populations.
    pub haz_interest_pooled: Hazard,
    /// Cause-1 hazard under control, trial records only.
    pub haz_interest_rct_ctrl: Hazard,
    pub haz_comp_rct_ctrl: Hazard,
    pub haz_comp_ext: Hazard,
    pub haz_interest_trt: Hazard,
    pub haz_comp_trt: Hazard,
    pub cens_rct_ctrl: Hazard,
    pub cens_rct_trt: Hazard,
    pub cens_ext: Hazard,
    /// `α̂ = n₁ / n`.
    pub alpha_hat: f64,
    pub weight_cap: f64,
    pub diagnostics: Vec<FitDiagnostic>,
}

impl NuisanceSet {
    /// An empty set to be filled in by hand.
    pub fn empty(alpha_hat: f64, weight_cap: f64) -> Self {
        Self {
            pi: None,
            e1: Arc::new(ConstantProbability(0.5)),
            haz_interest_pooled: None,
            haz_interest_rct_ctrl: None,
            haz_comp_rct_ctrl: None,
            haz_comp_ext: None,
            haz_interest_trt: None,
            haz_comp_trt: None,
            cens_rct_ctrl: None,
            cens_rct_trt: None,
            cens_ext: None,
            alpha_hat,
            weight_cap,
            diagnostics: Vec::new(),
        }
    }

    pub fn pi(&self) -> Result<&dyn ProbabilityModel> {
        self.pi.as_deref().ok_or(Error::MissingNuisance("pi"))
    }

    pub(crate) fn hazard<'a>(&self, slot: &'a Hazard, name: &'static str) -> Result<&'a dyn HazardModel> {
        slot.as_deref().ok_or(Error::MissingNuisance(name))
    }

    /// True when all fits converged.
    pub fn all_converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.converged)
    }
}

fn usable_columns(records: &[&EventRecord], dim: usize, stratum: &str) -> Vec<usize> {
    (0..dim)
        .filter(|&k| {
            let first = records.first().map(|r| r.covariates[k]);
            let varies = records.iter().any(|r| Some(r.covariates[k]) != first);
            if !varies {
                log::warn!("dropping constant covariate x{} in stratum `{stratum}`", k + 1);
            }
            varies
        })
        .collect()
}

fn fit_hazard<P>(
    cohort: &Cohort,
    subset: P,
    cause: Cause,
    stratum: &'static str,
    diagnostics: &mut Vec<FitDiagnostic>,
) -> Result<Hazard>
where
    P: Fn(&EventRecord) -> bool,
{
    let members: Vec<&EventRecord> = cohort.records().iter().filter(|r| subset(r)).collect();
    if members.is_empty() {
        return Ok(None);
    }
    if cause == Cause::Censored && !members.iter().any(|r| r.cause == Cause::Censored) {
        log::warn!("no censoring in stratum `{stratum}`; using a zero censoring hazard");
        return Ok(Some(Arc::new(CumulativeHazard::zero())));
    }
    let columns = usable_columns(&members, cohort.covariate_dim(), stratum);
    let fit: CoxFit =
        fit_cox_columns(cohort, subset, cause, &columns).map_err(|e| e.in_stratum(stratum))?;
    diagnostics.push(FitDiagnostic {
        stratum,
        converged: fit.converged,
        iterations: fit.iterations,
    });
    Ok(Some(Arc::new(fit)))
}

fn fit_probability(
    records: &[&EventRecord],
    dim: usize,
    label: impl Fn(&EventRecord) -> bool,
    stratum: &'static str,
    diagnostics: &mut Vec<FitDiagnostic>,
) -> Result<LogisticFit> {
    let columns = usable_columns(records, dim, stratum);
    let features: Vec<Vec<f64>> = records
        .iter()
        .map(|r| columns.iter().map(|&k| r.covariates[k]).collect())
        .collect();
    let labels: Vec<bool> = records.iter().map(|r| label(r)).collect();
    let reduced = fit_logistic(&features, &labels).map_err(|e| e.in_stratum(stratum))?;
    diagnostics.push(FitDiagnostic {
        stratum,
        converged: reduced.converged,
        iterations: reduced.iterations,
    });
    let mut coefficients = vec![0.0; dim];
    for (k, &c) in columns.iter().enumerate() {
        coefficients[c] = reduced.coefficients[k];
    }
    Ok(LogisticFit {
        coefficients,
        ..reduced
    })
}

/// Fits every nuisance function.
///
/// - `π̂`: logistic regression of `D` on `X` over the whole cohort.
/// - `ê₁`: logistic regression of `A` on `X` within the trial.
/// - Cause-1 hazard under control: one Cox fit pooling trial controls and external controls,
///   plus a trial-only fit used by the RCT-only estimator.
/// - Cause-2 hazards under control: one Cox fit per population.
/// - Treated arm: one cause-specific Cox fit per cause.
/// - Censoring: one Cox fit per trial arm and one for the external controls.
///
/// Strata without records leave their component absent.
pub fn fit_nuisances(cohort: &Cohort, options: &FitOptions) -> Result<NuisanceSet> {
    let dim = cohort.covariate_dim();
    let mut diagnostics = Vec::new();
    let all: Vec<&EventRecord> = cohort.records().iter().collect();
    let trial: Vec<&EventRecord> = all.iter().copied().filter(|r| r.in_trial()).collect();

    let pi: Option<Arc<dyn ProbabilityModel>> = if cohort.n_external() > 0 {
        let fit = fit_probability(&all, dim, EventRecord::in_trial, "pi", &mut diagnostics)?;
        Some(Arc::new(fit))
    } else {
        None
    };

    let n_treated = trial.iter().filter(|r| r.arm() == Arm::Treated).count();
    let e1: Arc<dyn ProbabilityModel> = if n_treated == 0 || n_treated == trial.len() {
        log::warn!("trial has a single arm; treatment probability fixed at its empirical value");
        Arc::new(ConstantProbability(n_treated as f64 / trial.len() as f64))
    } else {
        let fit = fit_probability(
            &trial,
            dim,
            |r| r.arm() == Arm::Treated,
            "e1",
            &mut diagnostics,
        )?;
        Arc::new(fit)
    };

    let rct_ctrl = |r: &EventRecord| r.in_trial() && r.is_control();
    let rct_trt = |r: &EventRecord| r.in_trial() && !r.is_control();
    let ext = |r: &EventRecord| r.pop == Population::External;
    let d = &mut diagnostics;

    let haz_interest_rct_ctrl =
        fit_hazard(cohort, rct_ctrl, Cause::Interest, "haz_interest_rct_ctrl", d)?;
    let haz_interest_pooled = if cohort.n_external() > 0 {
        fit_hazard(cohort, EventRecord::is_control, Cause::Interest, "haz_interest_pooled", d)?
    } else {
        haz_interest_rct_ctrl.clone()
    };
    let set = NuisanceSet {
        pi,
        e1,
        haz_interest_pooled,
        haz_interest_rct_ctrl,
        haz_comp_rct_ctrl: fit_hazard(cohort, rct_ctrl, Cause::Competing, "haz_comp_rct_ctrl", d)?,
        haz_comp_ext: fit_hazard(cohort, ext, Cause::Competing, "haz_comp_ext", d)?,
        haz_interest_trt: fit_hazard(cohort, rct_trt, Cause::Interest, "haz_interest_trt", d)?,
        haz_comp_trt: fit_hazard(cohort, rct_trt, Cause::Competing, "haz_comp_trt", d)?,
        cens_rct_ctrl: fit_hazard(cohort, rct_ctrl, Cause::Censored, "cens_rct_ctrl", d)?,
        cens_rct_trt: fit_hazard(cohort, rct_trt, Cause::Censored, "cens_rct_trt", d)?,
        cens_ext: fit_hazard(cohort, ext, Cause::Censored, "cens_ext", d)?,
        alpha_hat: cohort.alpha_hat(),
        weight_cap: options.weight_cap.cap(cohort.len()),
        diagnostics,
    };
    Ok(set)
}

/// Covariate-free nuisances: Nelson–Aalen hazards per stratum and empirical proportions.
///
/// With these, trial-only estimates reduce to Aalen–Johansen estimates.
pub fn nelson_aalen_nuisances(cohort: &Cohort, options: &FitOptions) -> Result<NuisanceSet> {
    let trial: Vec<&EventRecord> = cohort.records().iter().filter(|r| r.in_trial()).collect();
    let n_treated = trial.iter().filter(|r| r.arm() == Arm::Treated).count();
    let mut ns = NuisanceSet::empty(cohort.alpha_hat(), options.weight_cap.cap(cohort.len()));
    ns.e1 = Arc::new(ConstantProbability(n_treated as f64 / trial.len() as f64));
    if cohort.n_external() > 0 {
        ns.pi = Some(Arc::new(ConstantProbability(cohort.alpha_hat())));
    }
    let fit = |subset: &dyn Fn(&EventRecord) -> bool, cause: Cause| -> Result<Hazard> {
        if !cohort.records().iter().any(subset) {
            return Ok(None);
        }
        let h = crate::survival::nelson_aalen(cohort, cause, subset)?;
        Ok(Some(Arc::new(h) as Arc<dyn HazardModel>))
    };
    let rct_ctrl = |r: &EventRecord| r.in_trial() && r.is_control();
    let rct_trt = |r: &EventRecord| r.in_trial() && !r.is_control();
    let ext = |r: &EventRecord| r.pop == Population::External;
    ns.haz_interest_rct_ctrl = fit(&rct_ctrl, Cause::Interest)?;
    ns.haz_interest_pooled = fit(&EventRecord::is_control, Cause::Interest)?;
    ns.haz_comp_rct_ctrl = fit(&rct_ctrl, Cause::Competing)?;
    ns.haz_comp_ext = fit(&ext, Cause::Competing)?;
    ns.haz_interest_trt = fit(&rct_trt, Cause::Interest)?;
    ns.haz_comp_trt = fit(&rct_trt, Cause::Competing)?;
    ns.cens_rct_ctrl = fit(&rct_ctrl, Cause::Censored)?;
    ns.cens_rct_trt = fit(&rct_trt, Cause::Censored)?;
    ns.cens_ext = fit(&ext, Cause::Censored)?;
    Ok(ns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, time: f64, cause: u8, treat: Option<Arm>, x: f64) -> EventRecord {
        EventRecord {
            id: id.to_string(),
            time,
            cause: Cause::from_code(cause).unwrap(),
            treat,
            pop: if treat.is_some() {
                Population::Trial
            } else {
                Population::External
            },
            covariates: vec![x],
        }
    }

    #[test]
    fn default_cap_uses_natural_log() {
        let cap = WeightCapRule::SqrtNLogNOver5.cap(1500);
        assert!((cap - 1500f64.sqrt() * 1500f64.ln() / 5.0).abs() < 1e-12);
        assert!((cap - 56.648).abs() < 1e-3);
    }

    #[test]
    fn trial_only_cohort_has_no_external_fits() {
        let records: Vec<EventRecord> = (0..40)
            .map(|i| {
                let arm = if i % 2 == 0 { Arm::Control } else { Arm::Treated };
                rec(i, 1.0 + i as f64, (i % 3) as u8, Some(arm), (i % 7) as f64)
            })
            .collect();
        let cohort = Cohort::new(records, 1, 50.0).unwrap();
        let ns = fit_nuisances(&cohort, &FitOptions::default()).unwrap();
        assert!(ns.pi.is_none());
        assert!(ns.haz_comp_ext.is_none());
        assert!(ns.cens_ext.is_none());
        assert!(ns.haz_interest_trt.is_some());
        assert_eq!(ns.alpha_hat, 1.0);
    }

    #[test]
    fn censored_external_controls_fail_on_competing_hazard() {
        let mut records: Vec<EventRecord> = (0..30)
            .map(|i| {
                let arm = if i % 2 == 0 { Arm::Control } else { Arm::Treated };
                rec(i, 1.0 + i as f64, (i % 3) as u8, Some(arm), (i % 5) as f64)
            })
            .collect();
        records.extend((30..40).map(|i| rec(i, 1e-9 * i as f64, 0, None, (i % 4) as f64)));
        let cohort = Cohort::new(records, 1, 50.0).unwrap();
        let err = fit_nuisances(&cohort, &FitOptions::default()).unwrap_err();
        match err {
            Error::Stratum { stratum, source } => {
                assert_eq!(stratum, "haz_comp_ext");
                assert!(matches!(*source, Error::NoEvents));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
