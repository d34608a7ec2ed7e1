//! Replicate loop and the Monte Carlo summary table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_cohort, DgpConfig};
use super::truth::true_values;
use crate::error::{Error, Result};
use crate::estimators::{estimate_many, Mode, Target};
use crate::nuisance::{fit_nuisances, FitOptions};

/// Generator for replicate `index`: replicate `r` uses seed `seed + r` on stream 0.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64))
}

/// Estimate and standard error for each target in one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub index: usize,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimand: String,
    pub time: f64,
    #[serde(rename = "type")]
    pub kind: String,
    pub mean: f64,
    pub bias_1e4: f64,
    pub rmse_1e2: f64,
    pub se_1e2: f64,
    pub coverage_pct: f64,
    pub reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub rows: Vec<SummaryRow>,
    pub replicates: usize,
    pub excluded: usize,
}

pub const SUMMARY_HEADER: &str =
    "estimand,time,type,mean,bias_1e4,rmse_1e2,se_1e2,coverage_pct,reduction_pct";

impl SimulationSummary {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            return Ok(format!("{SUMMARY_HEADER}\n"));
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Parses a table written by [`to_csv`](Self::to_csv). Replicate counts are not stored in the file.
    pub fn from_csv(text: &str) -> Result<Vec<SummaryRow>> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != SUMMARY_HEADER {
            return Err(Error::Parse {
                line: 1,
                reason: format!("unexpected header `{}`", header.join(",")),
            });
        }
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    /// Fraction of replicates excluded because a fit failed.
    pub fn excluded_fraction(&self) -> f64 {
        let total = self.replicates + self.excluded;
        if total == 0 {
            0.0
        } else {
            self.excluded as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub summary: SimulationSummary,
    pub targets: Vec<Target>,
    pub truths: Vec<f64>,
    pub replicates: Vec<ReplicateResult>,
}

/// Every `(estimand, time)` combination under both modes, fusion first.
pub fn expand_targets(base: &[Target], times: &[f64]) -> Vec<Target> {
    let mut out = Vec::new();
    for b in base {
        for &time in times {
            for mode in [Mode::Fusion, Mode::RctOnly] {
                let t = Target { time, mode, ..*b };
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
    }
    out
}

fn run_replicate(
    config: &DgpConfig,
    options: &FitOptions,
    targets: &[Target],
    index: usize,
) -> Result<ReplicateResult> {
    let mut rng = replicate_rng(config.seed, index);
    let cohort = generate_cohort(&mut rng, config)?;
    let ns = fit_nuisances(&cohort, options)?;
    let reports = estimate_many(&cohort, &ns, targets)?;
    Ok(ReplicateResult {
        index,
        estimates: reports.iter().map(|r| r.estimate).collect(),
        std_errors: reports.iter().map(|r| r.std_error).collect(),
    })
}

/// Runs `reps` replicates and summarizes them against the oracle truth.
///
/// Replicates whose nuisance fits or estimates fail are dropped and counted in
/// `summary.excluded`.
pub fn run_study(
    config: &DgpConfig,
    options: &FitOptions,
    reps: usize,
    targets: &[Target],
) -> Result<StudyResult> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    config.validate()?;
    let truths = true_values(config, targets)?;
    let outcomes: Vec<Result<ReplicateResult>> = (0..reps)
        .into_par_iter()
        .map(|i| run_replicate(config, options, targets, i))
        .collect();
    let mut replicates = Vec::with_capacity(reps);
    let mut excluded = 0;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => replicates.push(r),
            Err(e) => {
                log::warn!("replicate {i} excluded: {e}");
                excluded += 1;
            }
        }
    }
    let rows = summarize(targets, &truths, &replicates);
    Ok(StudyResult {
        summary: SimulationSummary {
            rows,
            replicates: replicates.len(),
            excluded,
        },
        targets: targets.to_vec(),
        truths,
        replicates,
    })
}

/// Builds the summary rows; sums run in replicate order.
pub fn summarize(targets: &[Target], truths: &[f64], reps: &[ReplicateResult]) -> Vec<SummaryRow> {
    let m = reps.len() as f64;
    targets
        .iter()
        .enumerate()
        .map(|(k, target)| {
            let truth = truths[k];
            let mean = reps.iter().map(|r| r.estimates[k]).sum::<f64>() / m;
            let mse = reps
                .iter()
                .map(|r| (r.estimates[k] - truth).powi(2))
                .sum::<f64>()
                / m;
            let se = reps.iter().map(|r| r.std_errors[k]).sum::<f64>() / m;
            let covered = reps
                .iter()
                .filter(|r| {
                    let half = crate::estimators::Z_95 * r.std_errors[k];
                    (r.estimates[k] - truth).abs() <= half
                })
                .count();
            let partner = targets.iter().position(|t| {
                t.mode == Mode::RctOnly
                    && Target {
                        mode: Mode::Fusion,
                        ..*t
                    } == *target
            });
            let reduction_pct = match (target.mode, partner) {
                (Mode::Fusion, Some(p)) => Some(
                    reps.iter()
                        .map(|r| {
                            let (f, o) = (r.std_errors[k], r.std_errors[p]);
                            if o > 0.0 {
                                100.0 * (1.0 - f * f / (o * o))
                            } else {
                                0.0
                            }
                        })
                        .sum::<f64>()
                        / m,
                ),
                _ => None,
            };
            SummaryRow {
                estimand: target.estimand(),
                time: target.time,
                kind: target.mode.symbol().to_string(),
                mean,
                bias_1e4: (mean - truth) * 1e4,
                rmse_1e2: mse.sqrt() * 1e2,
                se_1e2: se * 1e2,
                coverage_pct: 100.0 * covered as f64 / m,
                reduction_pct,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::ArmTarget;
    use crate::survival::Cause;

    fn targets() -> Vec<Target> {
        expand_targets(
            &[Target::theta(Cause::Interest, ArmTarget::Control, 0.0, Mode::Fusion)],
            &[0.25, 1.0],
        )
    }

    #[test]
    fn expansion_pairs_modes() {
        let t = targets();
        assert_eq!(t.len(), 4);
        assert_eq!(t[0].mode, Mode::Fusion);
        assert_eq!(t[1].mode, Mode::RctOnly);
    }

    #[test]
    fn summary_arithmetic() {
        let t = targets();
        let reps = vec![
            ReplicateResult {
                index: 0,
                estimates: vec![0.1, 0.12, 0.3, 0.3],
                std_errors: vec![0.01, 0.02, 0.05, 0.05],
            },
            ReplicateResult {
                index: 1,
                estimates: vec![0.14, 0.1, 0.2, 0.4],
                std_errors: vec![0.02, 0.02, 0.05, 0.05],
            },
        ];
        let rows = summarize(&t, &[0.12, 0.12, 0.3, 0.3], &reps);
        assert!((rows[0].mean - 0.12).abs() < 1e-15);
        assert!(rows[0].bias_1e4.abs() < 1e-9);
        assert!((rows[0].rmse_1e2 - 2.0).abs() < 1e-9);
        assert_eq!(rows[0].coverage_pct, 50.0);
        // (75 + 0) / 2
        assert!((rows[0].reduction_pct.unwrap() - 37.5).abs() < 1e-9);
        assert_eq!(rows[1].reduction_pct, None);
        assert_eq!(rows[1].kind, "-");
        assert!(rows.iter().all(|r| r.rmse_1e2 >= r.bias_1e4.abs() * 1e-2 - 1e-12));
    }

    #[test]
    fn csv_round_trip() {
        let t = targets();
        let reps = vec![ReplicateResult {
            index: 0,
            estimates: vec![0.1 / 3.0, 0.2, 0.3, 0.4],
            std_errors: vec![0.01, 0.02, 0.03, 0.04],
        }];
        let s = SimulationSummary {
            rows: summarize(&t, &[0.1, 0.2, 0.3, 0.4], &reps),
            replicates: 1,
            excluded: 0,
        };
        let text = s.to_csv().unwrap();
        assert!(text.starts_with(SUMMARY_HEADER));
        assert_eq!(SimulationSummary::from_csv(&text).unwrap(), s.rows);
    }

    #[test]
    fn smoke_run() {
        let cfg = DgpConfig {
            n: 750,
            ..DgpConfig::default()
        };
        let base = [
            Target::theta(Cause::Interest, ArmTarget::Control, 0.0, Mode::Fusion),
            Target::theta(Cause::Interest, ArmTarget::Effect, 0.0, Mode::Fusion),
        ];
        let targets = expand_targets(&base, &[0.25, 1.0, 2.0]);
        let out = run_study(&cfg, &FitOptions::default(), 1, &targets).unwrap();
        assert_eq!(out.summary.replicates, 1);
        assert_eq!(out.summary.rows.len(), 12);
        for r in &out.summary.rows {
            assert!(r.mean.is_finite() && r.se_1e2.is_finite() && r.rmse_1e2.is_finite());
        }
    }
}
