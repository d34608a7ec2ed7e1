//! The reference data-generating process: correlated uniform covariates,
//! logistic selection into the trial, randomized treatment, Weibull
//! proportional cause-specific hazards and Weibull censoring.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::nuisance::expit;
use crate::survival::{Arm, Cause, Cohort, EventRecord, Population};

/// Serde helpers for reals that may be `±inf`, written as the strings `"inf"` / `"-inf"`.
pub(crate) mod extended_real {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.trim() {
                "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!("expected a number, got `{other}`"))),
            },
        }
    }
}

/// `intercept + treat·A + xᵀβ + (1 − A)·xᵀβ_control`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LinearPredictor {
    #[serde(with = "extended_real", default)]
    pub intercept: f64,
    #[serde(default)]
    pub treat: f64,
    #[serde(default)]
    pub x: Vec<f64>,
    /// Loadings active only under control.
    #[serde(default)]
    pub x_control: Vec<f64>,
}

impl LinearPredictor {
    pub fn new(intercept: f64, treat: f64, x: Vec<f64>) -> Self {
        Self {
            intercept,
            treat,
            x,
            x_control: Vec::new(),
        }
    }

    pub fn eval(&self, x: &[f64], arm: Arm) -> f64 {
        let a = f64::from(arm.code());
        let dot = |b: &[f64]| b.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        self.intercept + self.treat * a + dot(&self.x) + (1.0 - a) * dot(&self.x_control)
    }

    /// Intercept and covariate loadings with the arm fixed.
    pub fn at_arm(&self, arm: Arm, dim: usize) -> (f64, Vec<f64>) {
        let a = f64::from(arm.code());
        let coef = (0..dim)
            .map(|k| {
                self.x.get(k).copied().unwrap_or(0.0)
                    + (1.0 - a) * self.x_control.get(k).copied().unwrap_or(0.0)
            })
            .collect();
        (self.intercept + self.treat * a, coef)
    }
}

/// Weibull cumulative hazard `scale·t^shape`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weibull {
    pub shape: f64,
    pub scale: f64,
}

impl Weibull {
    pub fn cumulative(&self, t: f64) -> f64 {
        self.scale * t.powf(self.shape)
    }

    pub fn inverse(&self, h: f64) -> f64 {
        (h / self.scale).powf(1.0 / self.shape)
    }
}

/// Missing fields take their values from [`DgpConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    /// Correlation matrix of the latent normal vector.
    pub sigma: Vec<Vec<f64>>,
    /// Selection score intercept followed by one loading per covariate.
    pub sel_coef: Vec<f64>,
    pub trt_prob: f64,
    /// Cause-1 and cause-2 hazards in the trial.
    pub beta11: LinearPredictor,
    pub beta12: LinearPredictor,
    /// Cause-1 and cause-2 hazards among external controls.
    pub beta01: LinearPredictor,
    pub beta02: LinearPredictor,
    pub weibull_event: Weibull,
    pub weibull_cens: Weibull,
    pub cens_coef_rct: LinearPredictor,
    pub cens_coef_ext: LinearPredictor,
    pub seed: u64,
    /// Maximum observation time. Subjects with neither event nor censoring are
    /// censored here.
    pub tau: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        let off = 0.25;
        Self {
            n: 1500,
            sigma: vec![
                vec![1.0, off, off],
                vec![off, 1.0, off],
                vec![off, off, 1.0],
            ],
            sel_coef: vec![-0.2, 0.4, 0.2, 0.3],
            trt_prob: 0.5,
            beta11: LinearPredictor::new(0.0, 0.5, vec![0.2, 0.0, 0.7]),
            beta12: LinearPredictor::new(1.0, 0.05, vec![0.8, 0.5, 0.0]),
            beta01: LinearPredictor::new(0.0, 0.0, vec![0.2, 0.0, 0.7]),
            beta02: LinearPredictor::new(0.0, 0.0, vec![0.5, 0.8, -0.3]),
            weibull_event: Weibull {
                shape: 0.7,
                scale: 0.2,
            },
            weibull_cens: Weibull {
                shape: 0.7,
                scale: 0.24,
            },
            cens_coef_rct: LinearPredictor {
                intercept: 0.5,
                treat: 0.0,
                x: vec![0.0, 0.0, -0.05],
                x_control: vec![0.05, 0.0, 0.0],
            },
            cens_coef_ext: LinearPredictor::new(0.0, 0.0, vec![0.0, 0.05, 0.0]),
            seed: 1,
            tau: 2.0,
        }
    }
}

impl DgpConfig {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// Lower Cholesky factor of `sigma`, validating the invariants.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        let p = self.dim();
        if p == 0 || self.sigma.iter().any(|row| row.len() != p) {
            return Err(Error::Config("sigma must be a non-empty square matrix".into()));
        }
        let m = DMatrix::from_fn(p, p, |i, j| self.sigma[i][j]);
        for i in 0..p {
            if m[(i, i)] != 1.0 {
                return Err(Error::Config("sigma must have a unit diagonal".into()));
            }
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::Config("sigma must be symmetric".into()));
                }
            }
        }
        m.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Config("sigma is not positive definite".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.cholesky()?;
        if self.sel_coef.len() != self.dim() + 1 {
            return Err(Error::Config(format!(
                "sel_coef needs {} entries",
                self.dim() + 1
            )));
        }
        for w in [self.weibull_event, self.weibull_cens] {
            if !(w.shape > 0.0 && w.scale > 0.0) {
                return Err(Error::Config("Weibull shape and scale must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.trt_prob) {
            return Err(Error::Config("trt_prob must lie in [0, 1]".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be positive".into()));
        }
        Ok(())
    }

    /// True selection score `π(x)`.
    pub fn selection_score(&self, x: &[f64]) -> f64 {
        let lp = self.sel_coef[0]
            + self.sel_coef[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>();
        expit(lp)
    }

    /// Cause-specific linear predictors `(lp₁, lp₂)` for a subject.
    pub fn event_predictors(&self, x: &[f64], pop: Population, arm: Arm) -> (f64, f64) {
        match pop {
            Population::Trial => (self.beta11.eval(x, arm), self.beta12.eval(x, arm)),
            Population::External => (
                self.beta01.eval(x, Arm::Control),
                self.beta02.eval(x, Arm::Control),
            ),
        }
    }

    pub fn censoring_predictor(&self, x: &[f64], pop: Population, arm: Arm) -> f64 {
        match pop {
            Population::Trial => self.cens_coef_rct.eval(x, arm),
            Population::External => self.cens_coef_ext.eval(x, Arm::Control),
        }
    }

    /// Closed-form `F_j(t | a, x)` under the shared Weibull time shape.
    pub fn conditional_cif(&self, x: &[f64], pop: Population, arm: Arm, cause: Cause, t: f64) -> f64 {
        let (lp1, lp2) = self.event_predictors(x, pop, arm);
        let (e1, e2) = (lp1.exp(), lp2.exp());
        let total = e1 + e2;
        if total == 0.0 {
            return 0.0;
        }
        let share = match cause {
            Cause::Interest => e1 / total,
            Cause::Competing => e2 / total,
            Cause::Censored => return 0.0,
        };
        share * -(-self.weibull_event.cumulative(t) * total).exp_m1()
    }
}

/// `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Draws `n` covariate vectors `2Φ(Lz) − 1` with `LLᵀ = Σ`.
pub fn sample_covariates<R: Rng>(rng: &mut R, n: usize, sigma: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let cfg = DgpConfig {
        sigma: sigma.to_vec(),
        ..DgpConfig::default()
    };
    let l = cfg.cholesky()?;
    Ok((0..n).map(|_| draw_covariates(rng, &l)).collect())
}

fn draw_covariates<R: Rng>(rng: &mut R, l: &DMatrix<f64>) -> Vec<f64> {
    let p = l.nrows();
    let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
    (l * z).iter().map(|&v| 2.0 * normal_cdf(v) - 1.0).collect()
}

/// Draws `D ~ Bernoulli(π(x))` and, in the trial, `A ~ Bernoulli(trt_prob)`.
///
/// Two uniforms are always consumed so the stream layout does not depend on `D`.
pub fn sample_selection_treatment<R: Rng>(
    rng: &mut R,
    x: &[f64],
    config: &DgpConfig,
) -> (Population, Option<Arm>) {
    let u_sel: f64 = rng.gen();
    let u_trt: f64 = rng.gen();
    if u_sel < config.selection_score(x) {
        let arm = if u_trt < config.trt_prob {
            Arm::Treated
        } else {
            Arm::Control
        };
        (Population::Trial, Some(arm))
    } else {
        (Population::External, None)
    }
}

fn exponential<R: Rng>(rng: &mut R) -> f64 {
    // 1 − U lies in (0, 1]
    -(1.0 - rng.gen::<f64>()).ln()
}

/// Draws the latent event `(T, J)` by inverting the all-cause cumulative hazard.
/// Returns `T = ∞` when both causes are disabled.
pub fn sample_event<R: Rng>(
    rng: &mut R,
    x: &[f64],
    pop: Population,
    arm: Arm,
    config: &DgpConfig,
) -> (f64, Cause) {
    let (lp1, lp2) = config.event_predictors(x, pop, arm);
    let (e1, e2) = (lp1.exp(), lp2.exp());
    let e = exponential(rng);
    let u: f64 = rng.gen();
    let total = e1 + e2;
    if total == 0.0 {
        return (f64::INFINITY, Cause::Censored);
    }
    let time = config.weibull_event.inverse(e / total);
    let cause = if u < e1 / total {
        Cause::Interest
    } else {
        Cause::Competing
    };
    (time, cause)
}

/// Draws the latent censoring time; `∞` when censoring is disabled.
pub fn sample_censoring<R: Rng>(
    rng: &mut R,
    x: &[f64],
    pop: Population,
    arm: Arm,
    config: &DgpConfig,
) -> f64 {
    let rate = config.censoring_predictor(x, pop, arm).exp();
    let e = exponential(rng);
    if rate == 0.0 {
        f64::INFINITY
    } else {
        config.weibull_cens.inverse(e / rate)
    }
}

/// One observed record; draws happen in a fixed order per subject.
pub(crate) fn sample_record<R: Rng>(
    rng: &mut R,
    l: &DMatrix<f64>,
    config: &DgpConfig,
    id: usize,
) -> EventRecord {
    let x = draw_covariates(rng, l);
    let (pop, treat) = sample_selection_treatment(rng, &x, config);
    let arm = treat.unwrap_or(Arm::Control);
    let (t, j) = sample_event(rng, &x, pop, arm, config);
    let c = sample_censoring(rng, &x, pop, arm, config);
    let (time, cause) = if t <= c { (t, j) } else { (c, Cause::Censored) };
    let (time, cause) = if time.is_finite() {
        (time, cause)
    } else {
        (config.tau, Cause::Censored)
    };
    EventRecord {
        id: id.to_string(),
        time,
        cause,
        treat,
        pop,
        covariates: x,
    }
}

/// Simulates a cohort of `config.n` subjects.
pub fn generate_cohort<R: Rng>(rng: &mut R, config: &DgpConfig) -> Result<Cohort> {
    config.validate()?;
    let l = config.cholesky()?;
    let records = (1..=config.n)
        .map(|i| sample_record(rng, &l, config, i))
        .collect();
    Cohort::new(records, config.dim(), config.tau)
}
