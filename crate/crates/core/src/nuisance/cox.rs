//! Cox proportional-hazards fits: Newton–Raphson on the Breslow partial
//! likelihood, with the Breslow baseline cumulative hazard.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::survival::{Cause, Cohort, CumulativeHazard, EventRecord};

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    /// One coefficient per cohort covariate; dropped columns carry zero.
    pub coefficients: Vec<f64>,
    /// Breslow baseline jump times (at `x = 0`).
    pub baseline_times: Vec<f64>,
    /// Breslow baseline jump sizes. Not clamped, so they may exceed one.
    pub baseline_jumps: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_partial_likelihood: f64,
}

impl CoxFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    /// Conditional cumulative hazard at `x`.
    ///
    /// With `clamp`, each jump `ΔÂ₀(t)·exp(βᵀx)` is replaced by `1 − exp(−ΔÂ₀(t)·exp(βᵀx))`,
    /// which always lands in `[0, 1)`. Without it, a super-unit jump is an error.
    pub fn predict_cum_hazard(&self, x: &[f64], clamp: bool) -> Result<CumulativeHazard> {
        self.predict_upto(x, clamp, f64::INFINITY)
    }

    pub(crate) fn predict_upto(
        &self,
        x: &[f64],
        clamp: bool,
        horizon: f64,
    ) -> Result<CumulativeHazard> {
        let k = self.baseline_times.partition_point(|&t| t <= horizon);
        let risk = self.linear_predictor(x).exp();
        let jumps: Vec<f64> = self.baseline_jumps[..k]
            .iter()
            .map(|&d| {
                let raw = d * risk;
                if clamp {
                    -(-raw).exp_m1()
                } else {
                    raw
                }
            })
            .collect();
        let times = self.baseline_times[..k].to_vec();
        if clamp {
            Ok(CumulativeHazard::from_parts_unchecked(times, jumps))
        } else {
            CumulativeHazard::new(times, jumps)
        }
    }
}

struct Row<'a> {
    time: f64,
    event: bool,
    x: &'a [f64],
}

fn collect_rows<'a, P>(
    cohort: &'a Cohort,
    subset: &P,
    event_cause: Cause,
) -> Vec<Row<'a>>
where
    P: Fn(&EventRecord) -> bool,
{
    let mut rows: Vec<Row<'a>> = cohort
        .records()
        .iter()
        .filter(|r| subset(r))
        .map(|r| Row {
            time: r.time,
            event: r.cause == event_cause,
            x: &r.covariates,
        })
        .collect();
    // descending time: risk sets grow as we sweep
    rows.sort_by(|a, b| b.time.total_cmp(&a.time));
    rows
}

/// Breslow baseline `ΔÂ₀(t) = d(t) / Σ_{T̃ ≥ t} exp(βᵀxᵢ)` for a given `β`.
///
/// `beta` has one entry per covariate; with `β = 0` this is the Nelson–Aalen estimator.
pub fn breslow_baseline<P>(
    cohort: &Cohort,
    subset: P,
    event_cause: Cause,
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>)
where
    P: Fn(&EventRecord) -> bool,
{
    let rows = collect_rows(cohort, &subset, event_cause);
    breslow_from_rows(&rows, beta)
}

fn breslow_from_rows(rows: &[Row<'_>], beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let eta: Vec<f64> = rows
        .iter()
        .map(|r| beta.iter().zip(r.x).map(|(b, v)| b * v).sum())
        .collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };

    let mut times = Vec::new();
    let mut jumps = Vec::new();
    let mut risk_sum = 0.0;
    let mut i = 0;
    while i < rows.len() {
        let t = rows[i].time;
        let mut j = i;
        let mut events = 0usize;
        while j < rows.len() && rows[j].time == t {
            risk_sum += (eta[j] - shift).exp();
            events += usize::from(rows[j].event);
            j += 1;
        }
        if events > 0 {
            times.push(t);
            jumps.push(events as f64 / risk_sum * (-shift).exp());
        }
        i = j;
    }
    times.reverse();
    jumps.reverse();
    (times, jumps)
}

struct Derivatives {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

/// Log partial likelihood (Breslow ties) and its first two derivatives.
fn derivatives(rows: &[Row<'_>], x: &DMatrix<f64>, beta: &DVector<f64>) -> Derivatives {
    let p = beta.len();
    let eta = x * beta;
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };

    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut loglik = 0.0;
    let mut score = DVector::<f64>::zeros(p);
    let mut info = DMatrix::<f64>::zeros(p, p);

    let mut i = 0;
    while i < rows.len() {
        let t = rows[i].time;
        let mut j = i;
        let mut d = 0usize;
        let mut event_eta = 0.0;
        let mut event_x = DVector::<f64>::zeros(p);
        while j < rows.len() && rows[j].time == t {
            let w = (eta[j] - shift).exp();
            let xi = x.row(j).transpose();
            s0 += w;
            s1.axpy(w, &xi, 1.0);
            s2.ger(w, &xi, &xi, 1.0);
            if rows[j].event {
                d += 1;
                event_eta += eta[j];
                event_x += &xi;
            }
            j += 1;
        }
        if d > 0 {
            let df = d as f64;
            loglik += event_eta - df * (s0.ln() + shift);
            let mean = &s1 / s0;
            score += event_x - &mean * df;
            info += (&s2 / s0 - &mean * mean.transpose()) * df;
        }
        i = j;
    }
    Derivatives {
        loglik,
        score,
        info,
    }
}

/// Fits a Cox model for `event_cause` among the records selected by `subset`,
/// using every cohort covariate. Other outcomes act as right-censoring.
pub fn fit_cox<P>(cohort: &Cohort, subset: P, event_cause: Cause) -> Result<CoxFit>
where
    P: Fn(&EventRecord) -> bool,
{
    let columns: Vec<usize> = (0..cohort.covariate_dim()).collect();
    fit_cox_columns(cohort, subset, event_cause, &columns)
}

/// As [`fit_cox`], restricted to the given covariate columns; the others get coefficient zero.
pub fn fit_cox_columns<P>(
    cohort: &Cohort,
    subset: P,
    event_cause: Cause,
    columns: &[usize],
) -> Result<CoxFit>
where
    P: Fn(&EventRecord) -> bool,
{
    let rows = collect_rows(cohort, &subset, event_cause);
    if rows.len() < 2 {
        return Err(Error::Config(format!(
            "Cox fit needs at least two records, found {}",
            rows.len()
        )));
    }
    if !rows.iter().any(|r| r.event) {
        return Err(Error::NoEvents);
    }
    let p = columns.len();
    let n = rows.len();

    // centred design for numerical stability; the baseline is recomputed on raw x
    let mut x = DMatrix::from_fn(n, p, |i, k| rows[i].x[columns[k]]);
    for (k, &column) in columns.iter().enumerate() {
        let col = x.column(k);
        let mean = col.mean();
        let spread = col.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        if spread == 0.0 {
            return Err(Error::DegenerateDesign { column });
        }
        x.column_mut(k).add_scalar_mut(-mean);
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut current = derivatives(&rows, &x, &beta);
    let mut converged = p == 0;
    let mut iterations = 0;
    while !converged && iterations < MAX_ITER {
        if current.score.amax() < SCORE_TOL {
            converged = true;
            break;
        }
        let step = current
            .info
            .clone()
            .cholesky()
            .map(|c| c.solve(&current.score))
            .or_else(|| current.info.clone().lu().solve(&current.score))
            .ok_or(Error::Singular)?;

        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut next = derivatives(&rows, &x, &candidate);
        let mut halvings = 0;
        while (next.loglik < current.loglik || next.loglik.is_nan()) && halvings < MAX_HALVINGS {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            next = derivatives(&rows, &x, &candidate);
            halvings += 1;
        }
        iterations += 1;
        if next.loglik.is_finite() && next.loglik >= current.loglik {
            beta = candidate;
            current = next;
        } else {
            converged = current.score.amax() < SCORE_TOL;
            break;
        }
    }
    if !converged {
        log::warn!("Cox fit did not converge after {iterations} iterations");
    }

    let mut coefficients = vec![0.0; cohort.covariate_dim()];
    for (k, &c) in columns.iter().enumerate() {
        coefficients[c] = beta[k];
    }
    let (baseline_times, baseline_jumps) = breslow_from_rows(&rows, &coefficients);
    Ok(CoxFit {
        coefficients,
        baseline_times,
        baseline_jumps,
        converged,
        iterations,
        log_partial_likelihood: current.loglik,
    })
}
