//! Observed-data records `(T̃, J̃, A, X, D)` and the cohort that holds them.

use serde::{Deserialize, Serialize};

use super::hazard::CumulativeHazard;
use crate::error::{Error, Result};

/// Observed event type `J̃`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cause {
    Censored,
    Interest,
    Competing,
}

impl Cause {
    pub fn code(self) -> u8 {
        match self {
            Cause::Censored => 0,
            Cause::Interest => 1,
            Cause::Competing => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Cause::Censored),
            1 => Some(Cause::Interest),
            2 => Some(Cause::Competing),
            _ => None,
        }
    }

    pub fn is_event(self) -> bool {
        self != Cause::Censored
    }
}

/// Source population `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Population {
    /// `D = 0`
    External,
    /// `D = 1`
    Trial,
}

/// Treatment arm `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn code(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub id: String,
    pub time: f64,
    pub cause: Cause,
    /// Present exactly for trial participants.
    pub treat: Option<Arm>,
    pub pop: Population,
    pub covariates: Vec<f64>,
}

impl EventRecord {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if !(self.time.is_finite() && self.time > 0.0) {
            return Err(bad(format!("time must be positive and finite, got {}", self.time)));
        }
        match (self.pop, self.treat) {
            (Population::Trial, None) => return Err(bad("trial record without treatment".into())),
            (Population::External, Some(_)) => {
                return Err(bad("external control carries a treatment".into()))
            }
            _ => {}
        }
        if self.covariates.len() != dim {
            return Err(bad(format!(
                "expected {dim} covariates, found {}",
                self.covariates.len()
            )));
        }
        if self.covariates.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite covariate".into()));
        }
        Ok(())
    }

    pub fn in_trial(&self) -> bool {
        self.pop == Population::Trial
    }

    /// `D` as a number.
    pub fn d(&self) -> f64 {
        if self.in_trial() {
            1.0
        } else {
            0.0
        }
    }

    /// Effective arm: external controls are controls.
    pub fn arm(&self) -> Arm {
        self.treat.unwrap_or(Arm::Control)
    }

    pub fn is_control(&self) -> bool {
        self.arm() == Arm::Control
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    records: Vec<EventRecord>,
    covariate_dim: usize,
    tau: f64,
}

impl Cohort {
    pub fn new(records: Vec<EventRecord>, covariate_dim: usize, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidCohort(format!("tau must be positive, got {tau}")));
        }
        for r in &records {
            r.validate(covariate_dim)?;
        }
        if !records.iter().any(EventRecord::in_trial) {
            return Err(Error::InvalidCohort("no trial (pop = 1) records".into()));
        }
        Ok(Self {
            records,
            covariate_dim,
            tau,
        })
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_trial(&self) -> usize {
        self.records.iter().filter(|r| r.in_trial()).count()
    }

    pub fn n_external(&self) -> usize {
        self.len() - self.n_trial()
    }

    /// `α̂ = n₁ / n`.
    pub fn alpha_hat(&self) -> f64 {
        self.n_trial() as f64 / self.len() as f64
    }

    /// First event time shared by a cause-1 and a cause-2 record, if any.
    pub fn cross_cause_tie(&self) -> Option<f64> {
        let mut events: Vec<(f64, Cause)> = self
            .records
            .iter()
            .filter(|r| r.cause.is_event())
            .map(|r| (r.time, r.cause))
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        events
            .windows(2)
            .find(|w| w[0].0 == w[1].0 && w[0].1 != w[1].1)
            .map(|w| w[0].0)
    }
}

/// Nelson–Aalen estimate of the cause-specific hazard among records selected by `subset`.
///
/// Other causes and censoring act as right-censoring.
pub fn nelson_aalen<P>(cohort: &Cohort, cause: Cause, subset: P) -> Result<CumulativeHazard>
where
    P: Fn(&EventRecord) -> bool,
{
    let mut rows: Vec<(f64, bool)> = cohort
        .records()
        .iter()
        .filter(|r| subset(r))
        .map(|r| (r.time, r.cause == cause))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyRiskSet);
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut times = Vec::new();
    let mut jumps = Vec::new();
    let mut at_risk = rows.len();
    let mut i = 0;
    while i < rows.len() {
        let t = rows[i].0;
        let mut j = i;
        let mut events = 0usize;
        while j < rows.len() && rows[j].0 == t {
            events += usize::from(rows[j].1);
            j += 1;
        }
        if events > 0 {
            times.push(t);
            jumps.push(events as f64 / at_risk as f64);
        }
        at_risk -= j - i;
        i = j;
    }
    CumulativeHazard::new(times, jumps)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(id: &str, time: f64, cause: u8) -> EventRecord {
        EventRecord {
            id: id.into(),
            time,
            cause: Cause::from_code(cause).unwrap(),
            treat: Some(Arm::Control),
            pop: Population::Trial,
            covariates: vec![],
        }
    }

    fn three() -> Cohort {
        Cohort::new(
            vec![rec("a", 1.0, 1), rec("b", 2.0, 2), rec("c", 3.0, 0)],
            0,
            3.0,
        )
        .unwrap()
    }

    #[test]
    fn nelson_aalen_three_subjects() {
        let c = three();
        let h1 = nelson_aalen(&c, Cause::Interest, |_| true).unwrap();
        assert_eq!(h1.times(), &[1.0]);
        assert_eq!(h1.jumps(), &[1.0 / 3.0]);
        let h2 = nelson_aalen(&c, Cause::Competing, |_| true).unwrap();
        assert_eq!(h2.times(), &[2.0]);
        assert_eq!(h2.jumps(), &[0.5]);
    }

    #[test]
    fn nelson_aalen_edge_cases() {
        let c = three();
        assert!(matches!(
            nelson_aalen(&c, Cause::Interest, |_| false),
            Err(Error::EmptyRiskSet)
        ));
        let censored =
            Cohort::new(vec![rec("a", 1.0, 0), rec("b", 2.0, 0)], 0, 2.0).unwrap();
        assert!(nelson_aalen(&censored, Cause::Interest, |_| true)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn record_invariants() {
        let mut r = rec("x", 1.0, 1);
        r.pop = Population::External;
        assert!(r.validate(0).is_err());
        r.treat = None;
        assert!(r.validate(0).is_ok());
        r.time = 0.0;
        assert!(r.validate(0).is_err());
        let mut t = rec("y", 1.0, 1);
        t.treat = None;
        assert!(t.validate(0).is_err());
        assert!(rec("z", 1.0, 1).validate(2).is_err());
    }

    #[test]
    fn cohort_requires_trial_records() {
        let mut r = rec("x", 1.0, 1);
        r.pop = Population::External;
        r.treat = None;
        assert!(Cohort::new(vec![r], 0, 1.0).is_err());
    }

    #[test]
    fn detects_cross_cause_ties() {
        let c = Cohort::new(vec![rec("a", 1.0, 1), rec("b", 1.0, 1)], 0, 1.0).unwrap();
        assert_eq!(c.cross_cause_tie(), None);
        let c = Cohort::new(vec![rec("a", 1.0, 1), rec("b", 1.0, 2)], 0, 1.0).unwrap();
        assert_eq!(c.cross_cause_tie(), Some(1.0));
        let c = Cohort::new(vec![rec("a", 1.0, 0), rec("b", 1.0, 2)], 0, 1.0).unwrap();
        assert_eq!(c.cross_cause_tie(), None);
    }
}
