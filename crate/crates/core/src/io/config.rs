//! JSON run configuration shared by `estimate` and `simulate`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimators::{ArmTarget, Family, Mode, Target};
use crate::nuisance::WeightCapRule;
use crate::simulation::DgpConfig;
use crate::survival::Cause;

/// Which estimators to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSelection {
    Fusion,
    RctOnly,
    #[default]
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> &'static [Mode] {
        match self {
            ModeSelection::Fusion => &[Mode::Fusion],
            ModeSelection::RctOnly => &[Mode::RctOnly],
            ModeSelection::Both => &[Mode::Fusion, Mode::RctOnly],
        }
    }
}

/// `{family, cause, arm}` with `arm` one of `0`, `1` or `"effect"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub family: Family,
    pub cause: u8,
    #[serde(with = "arm_code")]
    pub arm: ArmTarget,
}

mod arm_code {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Code(u8),
        Name(String),
    }

    pub fn serialize<S: Serializer>(arm: &ArmTarget, s: S) -> Result<S::Ok, S::Error> {
        match arm {
            ArmTarget::Control => s.serialize_u8(0),
            ArmTarget::Treated => s.serialize_u8(1),
            ArmTarget::Effect => s.serialize_str("effect"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ArmTarget, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Code(0) => Ok(ArmTarget::Control),
            Raw::Code(1) => Ok(ArmTarget::Treated),
            Raw::Name(s) if s == "effect" => Ok(ArmTarget::Effect),
            Raw::Name(s) if s == "0" => Ok(ArmTarget::Control),
            Raw::Name(s) if s == "1" => Ok(ArmTarget::Treated),
            _ => Err(serde::de::Error::custom("arm must be 0, 1 or \"effect\"")),
        }
    }
}

fn default_jitter() -> f64 {
    1e-5
}

fn default_seed() -> u64 {
    1
}

fn default_reps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Analysis horizon. For simulation it overrides the horizon in `dgp`.
    #[serde(default)]
    pub tau: Option<f64>,
    pub times: Vec<f64>,
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub mode: ModeSelection,
    #[serde(default = "default_jitter")]
    pub jitter_scale: f64,
    #[serde(default)]
    pub weight_cap_rule: WeightCapRule,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub dgp: Option<DgpConfig>,
    #[serde(default = "default_reps")]
    pub reps: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Horizon from `tau`, else from the `dgp` block.
    pub fn horizon(&self) -> Result<f64> {
        self.tau
            .or_else(|| self.dgp.as_ref().map(|d| d.tau))
            .ok_or_else(|| Error::Config("`tau` is required".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_scale > 0.0 && self.jitter_scale.is_finite()) {
            return Err(Error::Config("jitter_scale must be positive".into()));
        }
        if self.times.is_empty() || self.targets.is_empty() {
            return Err(Error::Config("`times` and `targets` must be non-empty".into()));
        }
        let tau = self.horizon()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config("tau must be positive".into()));
        }
        for &t in &self.times {
            if !(0.0..=tau).contains(&t) {
                return Err(Error::Config(format!("time {t} lies outside [0, tau = {tau}]")));
            }
        }
        for t in &self.targets {
            if !(t.cause == 1 || t.cause == 2) {
                return Err(Error::Config(format!("target cause must be 1 or 2, got {}", t.cause)));
            }
        }
        if let Some(d) = &self.dgp {
            d.validate()?;
        }
        Ok(())
    }

    /// Targets in report order: target entry, then time, then mode.
    pub fn expanded_targets(&self) -> Vec<Target> {
        let mut out = Vec::new();
        for spec in &self.targets {
            let cause = Cause::from_code(spec.cause).unwrap_or(Cause::Interest);
            for &time in &self.times {
                for &mode in self.mode.modes() {
                    out.push(Target {
                        family: spec.family,
                        cause,
                        arm: spec.arm,
                        time,
                        mode,
                    });
                }
            }
        }
        out
    }

    /// The `dgp` block with the run's seed and horizon applied.
    pub fn simulation_config(&self) -> Result<DgpConfig> {
        let mut d = self
            .dgp
            .clone()
            .ok_or_else(|| Error::Config("simulation needs a `dgp` block".into()))?;
        d.seed = self.seed;
        d.tau = self.horizon()?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_document_with_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"tau": 2, "times": [1, 2],
                "targets": [{"family": "theta", "cause": 1, "arm": 0},
                            {"family": "gamma", "cause": 2, "arm": "effect"}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.jitter_scale, 1e-5);
        assert_eq!(cfg.weight_cap_rule, WeightCapRule::SqrtNLogNOver5);
        assert_eq!(cfg.mode, ModeSelection::Both);
        assert_eq!(cfg.targets[1].arm, ArmTarget::Effect);
        let t = cfg.expanded_targets();
        assert_eq!(t.len(), 8);
        assert_eq!((t[0].mode, t[1].mode), (Mode::Fusion, Mode::RctOnly));
    }

    #[test]
    fn rejects_bad_documents() {
        for doc in [
            r#"{"tau": 2, "times": [3], "targets": [{"family": "theta", "cause": 1, "arm": 0}]}"#,
            r#"{"tau": 2, "times": [1], "targets": [{"family": "theta", "cause": 3, "arm": 0}]}"#,
            r#"{"tau": 2, "times": [1], "targets": [{"family": "theta", "cause": 1, "arm": 2}]}"#,
            r#"{"tau": 2, "times": [1], "jitter_scale": 0, "targets": [{"family": "theta", "cause": 1, "arm": 0}]}"#,
            r#"{"times": [1], "targets": [{"family": "theta", "cause": 1, "arm": 0}]}"#,
            r#"{"tau": 2, "times": [1], "targets": [], "bogus": 1}"#,
        ] {
            assert!(RunConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn weight_cap_rule_names() {
        for (text, rule) in [
            (r#""sqrt_n_log_n_over5""#, WeightCapRule::SqrtNLogNOver5),
            (r#"{"fixed": 20}"#, WeightCapRule::Fixed(20.0)),
            (r#""none""#, WeightCapRule::None),
        ] {
            let doc = format!(
                r#"{{"tau": 2, "times": [1], "weight_cap_rule": {text},
                    "targets": [{{"family": "theta", "cause": 1, "arm": 0}}]}}"#
            );
            assert_eq!(RunConfig::from_json(&doc).unwrap().weight_cap_rule, rule);
        }
    }

    #[test]
    fn simulation_block_takes_run_seed() {
        let cfg = RunConfig::from_json(
            r#"{"times": [1], "seed": 9, "mode": "rct-only",
                "targets": [{"family": "theta", "cause": 1, "arm": 1}],
                "dgp": {"n": 300}}"#,
        )
        .unwrap();
        let d = cfg.simulation_config().unwrap();
        assert_eq!((d.n, d.seed, d.tau), (300, 9, 2.0));
        assert_eq!(d.sel_coef, DgpConfig::default().sel_coef);
    }
}
