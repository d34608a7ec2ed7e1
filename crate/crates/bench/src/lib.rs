//! Benchmark fixtures.

use cif_fusion::simulation::{expand_targets, generate_cohort, replicate_rng, DgpConfig};
use cif_fusion::{ArmTarget, Cause, Cohort, Mode, Target};

/// Reference cohort of `n` subjects from the default process.
pub fn cohort(n: usize) -> Cohort {
    let cfg = DgpConfig {
        n,
        ..DgpConfig::default()
    };
    generate_cohort(&mut replicate_rng(cfg.seed, 0), &cfg).expect("default process is valid")
}

/// Both families for both causes and arms at quarter horizons, both modes.
pub fn targets(tau: f64) -> Vec<Target> {
    let mut base = Vec::new();
    for cause in [Cause::Interest, Cause::Competing] {
        for arm in [ArmTarget::Control, ArmTarget::Effect] {
            base.push(Target::theta(cause, arm, 0.0, Mode::Fusion));
            base.push(Target::gamma(cause, arm, 0.0, Mode::Fusion));
        }
    }
    let times: Vec<f64> = (1..=4).map(|k| tau * k as f64 / 4.0).collect();
    expand_targets(&base, &times)
}
