//! Ground truth for the reference process: target-population averages of the
//! closed-form conditional incidences, and the true nuisance functions as
//! fine-grid step hazards that can be injected into the estimators.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{gamma, gamma_lr};

use super::dgp::{sample_covariates, DgpConfig, LinearPredictor, Weibull};
use crate::error::{Error, Result};
use crate::estimators::{ArmTarget, Family, Target};
use crate::nuisance::{
    ConstantProbability, HazardModel, LogisticProbability, NuisanceSet, ProportionalHazard,
};
use crate::survival::{Arm, Cause, Population};

/// Stream reserved for the truth oracle's covariate draws.
pub const TRUTH_STREAM: u64 = 1;
const BATCH: usize = 1_000_000;
const MAX_DRAWS: usize = 10_000_000;
const TARGET_SE: f64 = 1e-4;

/// `∫_0^t exp(−c·s^k) ds = c^{−1/k}/k · γ(1/k, c·t^k)`.
fn survival_area(c: f64, k: f64, t: f64) -> f64 {
    if c == 0.0 {
        return t;
    }
    let a = 1.0 / k;
    let x = c * t.powf(k);
    c.powf(-a) * a * gamma_lr(a, x) * gamma(a)
}

/// Conditional `θ` or `γ` for one subject's covariates.
fn conditional(config: &DgpConfig, x: &[f64], family: Family, cause: Cause, arm: Arm, t: f64) -> f64 {
    let (lp1, lp2) = config.event_predictors(x, Population::Trial, arm);
    let (e1, e2) = (lp1.exp(), lp2.exp());
    let total = e1 + e2;
    if total == 0.0 || t == 0.0 {
        return 0.0;
    }
    let share = if cause == Cause::Interest { e1 } else { e2 } / total;
    let w: Weibull = config.weibull_event;
    match family {
        Family::Theta => share * -(-w.cumulative(t) * total).exp_m1(),
        Family::Gamma => share * (t - survival_area(w.scale * total, w.shape, t)),
    }
}

fn target_value(config: &DgpConfig, x: &[f64], target: &Target) -> f64 {
    let f = |arm| conditional(config, x, target.family, target.cause, arm, target.time);
    match target.arm {
        ArmTarget::Control => f(Arm::Control),
        ArmTarget::Treated => f(Arm::Treated),
        ArmTarget::Effect => f(Arm::Treated) - f(Arm::Control),
    }
}

/// Oracle values of each target in the trial population.
///
/// Averages the closed-form conditional values over covariates drawn from the
/// full covariate law, weighted by `π(x)`, in batches of 10⁶ until every
/// standard error is below 10⁻⁴ (at most 10⁷ draws).
pub fn true_values(config: &DgpConfig, targets: &[Target]) -> Result<Vec<f64>> {
    config.validate()?;
    for t in targets {
        if t.cause == Cause::Censored {
            return Err(Error::Config("target cause must be 1 or 2".into()));
        }
    }
    weighted_average(config, targets.len(), |x, out| {
        for (slot, t) in out.iter_mut().zip(targets) {
            *slot = target_value(config, x, t);
        }
    })
}

/// `E[π(X)·v(X)] / E[π(X)]` for each component of `v`, by batched Monte Carlo.
fn weighted_average<F>(config: &DgpConfig, k: usize, values: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRUTH_STREAM);
    // running sums of w, w², w·v, w²·v, w²·v²
    let (mut sw, mut sww) = (0.0, 0.0);
    let mut swv = vec![0.0; k];
    let mut swwv = vec![0.0; k];
    let mut swwvv = vec![0.0; k];
    let mut v = vec![0.0; k];
    let mut draws = 0;
    loop {
        let xs = sample_covariates(&mut rng, BATCH, &config.sigma)?;
        for x in &xs {
            let w = config.selection_score(x);
            values(x, &mut v);
            sw += w;
            sww += w * w;
            for i in 0..k {
                swv[i] += w * v[i];
                swwv[i] += w * w * v[i];
                swwvv[i] += w * w * v[i] * v[i];
            }
        }
        draws += BATCH;
        let means: Vec<f64> = swv.iter().map(|s| s / sw).collect();
        // delta-method SE of the ratio estimator: √(Σ w²(v − m)²) / Σ w
        let worst = (0..k)
            .map(|i| {
                let m = means[i];
                let ss = swwvv[i] - 2.0 * m * swwv[i] + m * m * sww;
                ss.max(0.0).sqrt() / sw
            })
            .fold(0.0, f64::max);
        if worst < TARGET_SE || draws >= MAX_DRAWS {
            log::debug!("truth oracle: {draws} draws, max SE {worst:.2e}");
            return Ok(means);
        }
    }
}

/// `P(D = 1)` by Monte Carlo on the truth stream.
pub fn selection_probability(config: &DgpConfig, draws: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRUTH_STREAM);
    let xs = sample_covariates(&mut rng, draws, &config.sigma)?;
    Ok(xs.iter().map(|x| config.selection_score(x)).sum::<f64>() / draws as f64)
}

/// Step-function discretization of a proportional Weibull hazard.
///
/// The baseline `scale·t^shape` on `(0, horizon]` is split into `cells` pieces of
/// equal cumulative hazard, each represented by one jump at its hazard midpoint.
/// `stretch` multiplies all jump times, keeping different hazards' grids apart.
pub fn discretized_weibull(
    baseline: Weibull,
    predictor: &LinearPredictor,
    arm: Arm,
    dim: usize,
    horizon: f64,
    cells: usize,
    stretch: f64,
) -> ProportionalHazard {
    let total = baseline.cumulative(horizon);
    let step = total / cells as f64;
    let times = (0..cells)
        .map(|m| baseline.inverse((m as f64 + 0.5) * step) * stretch)
        .collect();
    let (intercept, coefficients) = predictor.at_arm(arm, dim);
    ProportionalHazard {
        times,
        baseline: vec![step; cells],
        intercept,
        coefficients,
    }
}

/// Constant hazard `rate` on a uniform time grid.
pub fn constant_hazard(rate: f64, horizon: f64, cells: usize, stretch: f64) -> ProportionalHazard {
    let step = horizon / cells as f64;
    ProportionalHazard {
        times: (0..cells)
            .map(|m| (m as f64 + 0.5) * step * stretch)
            .collect(),
        baseline: vec![rate * step; cells],
        intercept: 0.0,
        coefficients: Vec::new(),
    }
}

/// Default grid resolution for injected hazards.
pub const TRUTH_CELLS: usize = 400;

// Distinct stretches keep every pair of injected hazards free of shared jump times.
const STRETCH_INTEREST: f64 = 1.0;
const STRETCH_COMPETING: f64 = 1.0 + 1e-9;
const STRETCH_CENSORING: f64 = 1.0 - 1e-9;

/// The true nuisance functions of `config`, with hazards discretized on
/// `cells` cells up to `config.tau`.
///
/// `alpha` is the population trial fraction `P(D = 1)`.
pub fn true_nuisances(config: &DgpConfig, cells: usize, alpha: f64) -> NuisanceSet {
    let dim = config.dim();
    let tau = config.tau;
    let haz = |w: Weibull, lp: &LinearPredictor, arm: Arm, stretch: f64| -> Option<Arc<dyn HazardModel>> {
        Some(Arc::new(discretized_weibull(w, lp, arm, dim, tau, cells, stretch)))
    };
    let ev = config.weibull_event;
    let ce = config.weibull_cens;
    let mut ns = NuisanceSet::empty(alpha, f64::INFINITY);
    ns.pi = Some(Arc::new(LogisticProbability {
        intercept: config.sel_coef[0],
        coefficients: config.sel_coef[1..].to_vec(),
    }));
    ns.e1 = Arc::new(ConstantProbability(config.trt_prob));
    ns.haz_interest_rct_ctrl = haz(ev, &config.beta11, Arm::Control, STRETCH_INTEREST);
    ns.haz_interest_pooled = ns.haz_interest_rct_ctrl.clone();
    ns.haz_comp_rct_ctrl = haz(ev, &config.beta12, Arm::Control, STRETCH_COMPETING);
    ns.haz_comp_ext = haz(ev, &config.beta02, Arm::Control, STRETCH_COMPETING);
    ns.haz_interest_trt = haz(ev, &config.beta11, Arm::Treated, STRETCH_INTEREST);
    ns.haz_comp_trt = haz(ev, &config.beta12, Arm::Treated, STRETCH_COMPETING);
    ns.cens_rct_ctrl = haz(ce, &config.cens_coef_rct, Arm::Control, STRETCH_CENSORING);
    ns.cens_rct_trt = haz(ce, &config.cens_coef_rct, Arm::Treated, STRETCH_CENSORING);
    ns.cens_ext = haz(ce, &config.cens_coef_ext, Arm::Control, STRETCH_CENSORING);
    ns
}

/// Which nuisance components are injected at their true values; the rest are
/// replaced by fixed wrong constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Cause-1 and trial cause-2 hazards correct.
    HazardsCorrect,
    /// Cause-1 hazard, treatment probability and selection score correct.
    HazardAndScoresCorrect,
    /// Everything except the cause-1 hazard correct.
    AllButInterestCorrect,
    AllWrong,
}

/// Wrong constant values used for misspecified components.
pub mod wrong {
    pub const INTEREST_RATE: f64 = 0.05;
    pub const COMPETING_RATE: f64 = 0.3;
    pub const CENSORING_RATE: f64 = 0.1;
    pub const SELECTION: f64 = 0.5;
    pub const TREATMENT: f64 = 0.3;
}

/// Control-arm nuisances for a robustness scenario. `alpha_hat` is the sample trial fraction.
pub fn scenario_nuisances(config: &DgpConfig, scenario: Scenario, cells: usize, alpha_hat: f64, weight_cap: f64) -> NuisanceSet {
    let truth = true_nuisances(config, cells, alpha_hat);
    let tau = config.tau;
    let constant = |rate: f64, stretch: f64| -> Option<Arc<dyn HazardModel>> {
        Some(Arc::new(constant_hazard(rate, tau, cells, stretch)))
    };
    let (interest, competing, scores, rest) = match scenario {
        Scenario::HazardsCorrect => (true, true, false, false),
        Scenario::HazardAndScoresCorrect => (true, false, true, false),
        Scenario::AllButInterestCorrect => (false, true, true, true),
        Scenario::AllWrong => (false, false, false, false),
    };
    let mut ns = NuisanceSet::empty(alpha_hat, weight_cap);
    if interest {
        ns.haz_interest_pooled = truth.haz_interest_pooled.clone();
        ns.haz_interest_rct_ctrl = truth.haz_interest_rct_ctrl.clone();
    } else {
        ns.haz_interest_pooled = constant(wrong::INTEREST_RATE, STRETCH_INTEREST);
        ns.haz_interest_rct_ctrl = ns.haz_interest_pooled.clone();
    }
    ns.haz_comp_rct_ctrl = if competing {
        truth.haz_comp_rct_ctrl.clone()
    } else {
        constant(wrong::COMPETING_RATE, STRETCH_COMPETING)
    };
    if scores {
        ns.pi = truth.pi.clone();
        ns.e1 = truth.e1.clone();
    } else {
        ns.pi = Some(Arc::new(ConstantProbability(wrong::SELECTION)));
        ns.e1 = Arc::new(ConstantProbability(wrong::TREATMENT));
    }
    if rest {
        ns.haz_comp_ext = truth.haz_comp_ext.clone();
        ns.cens_rct_ctrl = truth.cens_rct_ctrl.clone();
        ns.cens_ext = truth.cens_ext.clone();
    } else {
        ns.haz_comp_ext = constant(wrong::COMPETING_RATE, STRETCH_COMPETING);
        ns.cens_rct_ctrl = constant(wrong::CENSORING_RATE, STRETCH_CENSORING);
        ns.cens_ext = constant(wrong::CENSORING_RATE, STRETCH_CENSORING);
    }
    ns
}
