use super::*;
use crate::nuisance::{nelson_aalen_nuisances, ConstantProbability, FitOptions, WeightCapRule};
use crate::survival::{aalen_johansen, nelson_aalen, Population};
use approx::assert_abs_diff_eq;
use std::sync::Arc;

fn no_cap() -> FitOptions {
    FitOptions {
        weight_cap: WeightCapRule::None,
    }
}

fn rec(id: usize, time: f64, cause: u8, arm: Option<Arm>) -> EventRecord {
    EventRecord {
        id: id.to_string(),
        time,
        cause: Cause::from_code(cause).unwrap(),
        treat: arm,
        pop: if arm.is_some() {
            Population::Trial
        } else {
            Population::External
        },
        covariates: vec![],
    }
}

fn controls(rows: &[(f64, u8)]) -> Cohort {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, &(t, c))| rec(i, t, c, Some(Arm::Control)))
        .collect();
    Cohort::new(records, 0, 10.0).unwrap()
}

fn mixed() -> Cohort {
    let rows = [
        (0.4, 1, Some(Arm::Control)),
        (0.9, 2, Some(Arm::Treated)),
        (1.3, 0, Some(Arm::Control)),
        (1.7, 1, Some(Arm::Treated)),
        (2.2, 2, Some(Arm::Control)),
        (2.6, 0, Some(Arm::Treated)),
        (3.1, 1, Some(Arm::Control)),
        (3.4, 1, Some(Arm::Treated)),
        (0.6, 1, None),
        (1.1, 0, None),
        (1.9, 2, None),
        (2.4, 1, None),
        (3.6, 0, None),
        (4.0, 2, Some(Arm::Control)),
        (4.4, 0, Some(Arm::Treated)),
    ];
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, &(t, c, a))| rec(i, t, c, a))
        .collect();
    Cohort::new(records, 0, 5.0).unwrap()
}

#[test]
fn before_first_jump_everything_is_zero() {
    let cohort = mixed();
    let ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    for mode in [Mode::Fusion, Mode::RctOnly] {
        let iv = influence_theta(&cohort, &ns, Arm::Control, Cause::Interest, 0.1, mode).unwrap();
        assert!(iv.values.iter().all(|&v| v == 0.0));
    }
    let r = estimate(
        &cohort,
        &ns,
        &Target::theta(Cause::Interest, ArmTarget::Control, 0.0, Mode::Fusion),
    )
    .unwrap();
    assert_eq!((r.estimate, r.std_error), (0.0, 0.0));
}

#[test]
fn three_subject_cohort_matches_aalen_johansen() {
    let cohort = controls(&[(1.0, 1), (2.0, 2), (3.0, 0)]);
    let ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    for (cause, expected) in [(Cause::Interest, 1.0 / 3.0), (Cause::Competing, 1.0 / 3.0)] {
        let r = estimate(
            &cohort,
            &ns,
            &Target::theta(cause, ArmTarget::Control, 3.0, Mode::RctOnly),
        )
        .unwrap();
        assert_abs_diff_eq!(r.estimate, expected, epsilon = 1e-14);
    }
}

#[test]
fn rct_only_equals_aalen_johansen_with_ties() {
    let cohort = controls(&[
        (1.0, 1),
        (1.0, 1),
        (2.0, 0),
        (2.0, 2),
        (3.0, 1),
        (3.5, 0),
        (4.0, 2),
        (4.0, 2),
        (5.0, 1),
    ]);
    let ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    let a1 = nelson_aalen(&cohort, Cause::Interest, |_| true).unwrap();
    let a2 = nelson_aalen(&cohort, Cause::Competing, |_| true).unwrap();
    for t in [0.5, 1.0, 2.0, 3.7, 4.0, 5.0, 10.0] {
        let est = influence_theta(&cohort, &ns, Arm::Control, Cause::Interest, t, Mode::RctOnly)
            .unwrap()
            .mean();
        assert_abs_diff_eq!(est, aalen_johansen(&a1, &a2, t).unwrap(), epsilon = 1e-12);
    }
}

#[test]
fn one_subject_time_lost() {
    let cohort = controls(&[(1.0, 1)]);
    let ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    let iv = influence_gamma(&cohort, &ns, Arm::Control, Cause::Interest, 2.0, Mode::RctOnly)
        .unwrap();
    assert_abs_diff_eq!(iv.mean(), 1.0, epsilon = 1e-15);
}

#[test]
fn gamma_is_the_exact_integral_of_theta() {
    let cohort = mixed();
    let ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    let t = 4.2;
    for mode in [Mode::Fusion, Mode::RctOnly] {
        for arm in [Arm::Control, Arm::Treated] {
            for cause in [Cause::Interest, Cause::Competing] {
                let gamma = influence_gamma(&cohort, &ns, arm, cause, t, mode).unwrap().mean();
                // θ(s) is piecewise constant between observed times
                let mut breaks: Vec<f64> = cohort.records().iter().map(|r| r.time).collect();
                breaks.push(0.0);
                breaks.push(t);
                breaks.retain(|&b| b <= t);
                breaks.sort_by(f64::total_cmp);
                breaks.dedup();
                let mut exact = 0.0;
                for w in breaks.windows(2) {
                    let theta = influence_theta(&cohort, &ns, arm, cause, w[0], mode)
                        .unwrap()
                        .mean();
                    exact += theta * (w[1] - w[0]);
                }
                assert_abs_diff_eq!(gamma, exact, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn treated_arm_ignores_mode() {
    let cohort = mixed();
    let ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    let a = influence_theta(&cohort, &ns, Arm::Treated, Cause::Competing, 3.0, Mode::Fusion)
        .unwrap();
    let b = influence_theta(&cohort, &ns, Arm::Treated, Cause::Competing, 3.0, Mode::RctOnly)
        .unwrap();
    assert_eq!(a.values, b.values);
    // external controls carry zero treated-arm influence
    for (v, r) in a.values.iter().zip(cohort.records()) {
        if !r.in_trial() {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn effect_is_entrywise_difference() {
    let cohort = mixed();
    let ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    let targets = [
        Target::theta(Cause::Interest, ArmTarget::Treated, 3.0, Mode::Fusion),
        Target::theta(Cause::Interest, ArmTarget::Control, 3.0, Mode::Fusion),
        Target::theta(Cause::Interest, ArmTarget::Effect, 3.0, Mode::Fusion),
    ];
    let r = estimate_many(&cohort, &ns, &targets).unwrap();
    for k in 0..cohort.len() {
        assert_eq!(
            r[2].influence.values[k],
            r[0].influence.values[k] - r[1].influence.values[k]
        );
    }
    assert_abs_diff_eq!(r[2].estimate, r[0].estimate - r[1].estimate, epsilon = 1e-15);
}

#[test]
fn full_selection_makes_fusion_and_rct_only_coincide() {
    let cohort = controls(&[(0.5, 1), (1.0, 2), (1.5, 0), (2.0, 1), (2.5, 2), (3.0, 1)]);
    let mut ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    ns.pi = Some(Arc::new(ConstantProbability(1.0)));
    ns.haz_comp_ext = ns.haz_comp_rct_ctrl.clone();
    ns.cens_ext = ns.cens_rct_ctrl.clone();
    let f = influence_theta(&cohort, &ns, Arm::Control, Cause::Interest, 2.7, Mode::Fusion)
        .unwrap();
    let r = influence_theta(&cohort, &ns, Arm::Control, Cause::Interest, 2.7, Mode::RctOnly)
        .unwrap();
    for (a, b) in f.values.iter().zip(&r.values) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
}

#[test]
fn empirical_estimates_add_up_to_one() {
    let cohort = controls(&[(0.5, 1), (1.0, 2), (1.5, 0), (2.0, 1), (2.5, 2), (3.0, 0)]);
    let ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    let a1 = nelson_aalen(&cohort, Cause::Interest, |_| true).unwrap();
    let a2 = nelson_aalen(&cohort, Cause::Competing, |_| true).unwrap();
    let all = a1.sum(&a2).unwrap();
    for t in [0.7, 2.2, 3.0] {
        let r = estimate_many(
            &cohort,
            &ns,
            &[
                Target::theta(Cause::Interest, ArmTarget::Control, t, Mode::RctOnly),
                Target::theta(Cause::Competing, ArmTarget::Control, t, Mode::RctOnly),
            ],
        )
        .unwrap();
        let surv = crate::survival::product_integral(&all, t);
        assert_abs_diff_eq!(r[0].estimate + r[1].estimate + surv, 1.0, epsilon = 1e-8);
    }
}

#[test]
fn standard_error_follows_centered_influence() {
    let cohort = mixed();
    let ns = nelson_aalen_nuisances(&cohort, &FitOptions::default()).unwrap();
    let r = estimate(
        &cohort,
        &ns,
        &Target::theta(Cause::Interest, ArmTarget::Control, 3.0, Mode::Fusion),
    )
    .unwrap();
    let n = cohort.len() as f64;
    let phi: Vec<f64> = r
        .influence
        .values
        .iter()
        .zip(cohort.records())
        .map(|(v, rec)| v - rec.d() / ns.alpha_hat * r.estimate)
        .collect();
    let se = (phi.iter().map(|p| p * p).sum::<f64>() / n).sqrt() / n.sqrt();
    assert_abs_diff_eq!(r.std_error, se, epsilon = 1e-15);
    assert_abs_diff_eq!(r.ci_high - r.estimate, Z_95 * se, epsilon = 1e-15);
    assert_abs_diff_eq!(r.estimate - r.ci_low, Z_95 * se, epsilon = 1e-15);
}

#[test]
fn reduction_vanishes_without_external_mass_or_events() {
    let cohort = mixed();
    let mut ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    ns.pi = Some(Arc::new(ConstantProbability(1.0)));
    assert_eq!(variance_reduction(&cohort, &ns, 3.0).unwrap().reduction_estimate, 0.0);

    let mut ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    ns.haz_interest_pooled = Some(Arc::new(crate::survival::CumulativeHazard::zero()));
    assert_eq!(variance_reduction(&cohort, &ns, 3.0).unwrap().reduction_estimate, 0.0);
}

#[test]
fn target_labels() {
    let t = Target::gamma(Cause::Competing, ArmTarget::Effect, 1.0, Mode::Fusion);
    assert_eq!(t.estimand(), "gamma_2{t}");
    assert_eq!(
        Target::theta(Cause::Interest, ArmTarget::Control, 1.0, Mode::RctOnly).estimand(),
        "theta_1(0)"
    );
}

#[test]
fn times_beyond_tau_are_rejected() {
    let cohort = mixed();
    let ns = nelson_aalen_nuisances(&cohort, &no_cap()).unwrap();
    assert!(matches!(
        influence_theta(&cohort, &ns, Arm::Control, Cause::Interest, 6.0, Mode::Fusion),
        Err(Error::Config(_))
    ));
}
