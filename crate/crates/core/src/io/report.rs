//! Report files written by `estimate`.

use std::io::Write;

use crate::error::Result;
use crate::estimators::{EstimateReport, Mode, Target};
use crate::survival::Cohort;

pub const ESTIMATES_HEADER: &str = "estimand,time,type,estimate,ci_low,ci_high,reduction_pct";
pub const INFLUENCE_HEADER: &str = "id,estimand,time,type,value";

/// Percentage reduction in confidence-interval length of a fusion row against
/// its RCT-only partner, when both are present.
fn ci_reduction(reports: &[EstimateReport], k: usize) -> Option<f64> {
    let target = reports[k].target;
    if target.mode != Mode::Fusion {
        return None;
    }
    let partner = reports.iter().find(|r| {
        r.target
            == Target {
                mode: Mode::RctOnly,
                ..target
            }
    })?;
    let rct = partner.ci_high - partner.ci_low;
    if rct > 0.0 {
        Some(100.0 * (1.0 - (reports[k].ci_high - reports[k].ci_low) / rct))
    } else {
        None
    }
}

pub fn write_estimates<W: Write>(reports: &[EstimateReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATES_HEADER.split(','))?;
    for (k, r) in reports.iter().enumerate() {
        w.write_record([
            r.target.estimand(),
            r.target.time.to_string(),
            r.target.mode.symbol().to_string(),
            r.estimate.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            ci_reduction(reports, k).map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-record uncentered influence values in long format.
pub fn write_influence<W: Write>(cohort: &Cohort, reports: &[EstimateReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INFLUENCE_HEADER.split(','))?;
    for r in reports {
        let label = r.target.estimand();
        let time = r.target.time.to_string();
        for (rec, v) in cohort.records().iter().zip(&r.influence.values) {
            w.write_record([
                rec.id.as_str(),
                label.as_str(),
                time.as_str(),
                r.target.mode.symbol(),
                v.to_string().as_str(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{ArmTarget, InfluenceVector};
    use crate::survival::{Arm, Cause, EventRecord, Population};

    fn report(mode: Mode, values: Vec<f64>, cohort: &Cohort) -> EstimateReport {
        let target = Target::theta(Cause::Interest, ArmTarget::Control, 1.0, mode);
        EstimateReport::from_influence(cohort, 1.0, InfluenceVector { target, values })
    }

    fn cohort() -> Cohort {
        let records = (0..4)
            .map(|i| EventRecord {
                id: format!("r{i}"),
                time: 1.0 + i as f64,
                cause: Cause::Interest,
                treat: Some(Arm::Control),
                pop: Population::Trial,
                covariates: vec![],
            })
            .collect();
        Cohort::new(records, 0, 5.0).unwrap()
    }

    #[test]
    fn reduction_compares_interval_lengths() {
        let c = cohort();
        let reports = [
            report(Mode::Fusion, vec![0.1, 0.2, 0.3, 0.4], &c),
            report(Mode::RctOnly, vec![0.0, 0.1, 0.4, 0.5], &c),
        ];
        let mut buf = Vec::new();
        write_estimates(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], ESTIMATES_HEADER);
        let expected = 100.0 * (1.0 - reports[0].std_error / reports[1].std_error);
        let got: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert_eq!(lines[2].split(',').nth(2), Some("-"));
        assert!(lines[2].ends_with(','));
    }

    #[test]
    fn influence_is_long_format() {
        let c = cohort();
        let reports = [report(Mode::Fusion, vec![0.1, 0.2, 0.3, 0.4], &c)];
        let mut buf = Vec::new();
        write_influence(&c, &reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().nth(1).unwrap(), "r0,theta_1(0),1,+,0.1");
    }
}
