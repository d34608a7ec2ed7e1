//! Per-subject evaluation of the derived nuisance quantities on a merged jump grid.
//!
//! For fixed covariates `x` every plug-in (survival, cumulative incidences,
//! censoring survival, the `H` weights) is a step function whose jumps lie on
//! the union of the jump times of the underlying hazards. A [`Profile`] stores
//! those step functions once, together with prefix sums that turn every
//! compensator integral into a lookup.

use super::models::HazardModel;
use super::set::NuisanceSet;
use crate::error::{Error, Result};
use crate::survival::{Arm, Cause, CumulativeHazard};

/// Which arm-specific system of hazards a profile describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProfileKind {
    /// Control arm with the pooled cause-1 hazard and the fused weight `H_·`.
    ControlFusion,
    /// Control arm using trial data only.
    ControlRctOnly,
    /// Treated arm (trial data only).
    Treated,
}

impl ProfileKind {
    pub fn arm(self) -> Arm {
        match self {
            ProfileKind::Treated => Arm::Treated,
            _ => Arm::Control,
        }
    }
}

/// Which counting process a martingale integral runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Integrator {
    /// Cause 1.
    Main,
    /// Cause 2.
    Comp,
}

impl Integrator {
    fn index(self) -> usize {
        match self {
            Integrator::Main => 0,
            Integrator::Comp => 1,
        }
    }

    fn cause(self) -> Cause {
        match self {
            Integrator::Main => Cause::Interest,
            Integrator::Comp => Cause::Competing,
        }
    }
}

pub(crate) fn cause_index(cause: Cause) -> Result<usize> {
    match cause {
        Cause::Interest => Ok(0),
        Cause::Competing => Ok(1),
        Cause::Censored => Err(Error::Config("target cause must be 1 or 2".into())),
    }
}

/// `1 / (1 − d)`, or zero when the denominator vanishes (then the numerator does too).
fn guarded_inverse(d: f64) -> f64 {
    let den = 1.0 - d;
    if den > 0.0 {
        1.0 / den
    } else {
        0.0
    }
}

/// Prefix sums for one (integrator, cause) pair. With `m = ΔA·min(1/H(s−), cap)` and
/// `q = 1/(1 − ΔA)`, the compensator integrals up to grid index `i` are
/// `θ: a − F(t)·b` and `γ: t·a − c − R(t)·b`.
#[derive(Debug, Clone, Default)]
struct Prefix {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Weights {
    /// `H` after each grid point, for the cause-1 and cause-2 integrals.
    h: [Vec<f64>; 2],
    h0: [f64; 2],
    /// First grid index whose integral mass meets `H(s−) = 0`.
    first_bad: [Option<usize>; 2],
    /// `prefix[integrator][cause]`
    prefix: [[Prefix; 2]; 2],
    /// `(S₀S₀ᶜ)` after each grid point (fusion only).
    ext: Vec<f64>,
}

/// Step-function plug-ins for one subject under one arm.
#[derive(Debug, Clone)]
pub struct Profile {
    kind: ProfileKind,
    grid: Vec<f64>,
    d: [Vec<f64>; 2],
    surv: Vec<f64>,
    surv_c: Vec<f64>,
    cif: [Vec<f64>; 2],
    /// `R_j(g) = ∫_0^g F_j(u) du` at each grid point.
    area: [Vec<f64>; 2],
    weights: Option<Weights>,
    cap: f64,
}

/// Jumps of `h` at every point of `grid` (which must contain all of `h`'s jump times).
fn on_grid(h: &CumulativeHazard, grid: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    let mut i = 0;
    for (&t, &d) in h.times().iter().zip(h.jumps()) {
        while grid[i] < t {
            i += 1;
        }
        out[i] = d;
    }
    out
}

struct Inputs {
    main: CumulativeHazard,
    comp: CumulativeHazard,
    cens: Option<CumulativeHazard>,
    ext_comp: Option<CumulativeHazard>,
    ext_cens: Option<CumulativeHazard>,
    /// Probability of the profile's arm given `x` in the trial.
    arm_prob: f64,
    pi: Option<f64>,
}

fn load(
    ns: &NuisanceSet,
    kind: ProfileKind,
    x: &[f64],
    horizon: f64,
    with_weights: bool,
) -> Result<Inputs> {
    let eval = |m: &dyn HazardModel| m.cumulative_hazard(x, horizon);
    let e1 = ns.e1.probability(x);
    let (main, comp, cens, arm_prob) = match kind {
        ProfileKind::ControlFusion => (
            ns.hazard(&ns.haz_interest_pooled, "haz_interest_pooled")?,
            ns.hazard(&ns.haz_comp_rct_ctrl, "haz_comp_rct_ctrl")?,
            &ns.cens_rct_ctrl,
            1.0 - e1,
        ),
        ProfileKind::ControlRctOnly => (
            ns.hazard(&ns.haz_interest_rct_ctrl, "haz_interest_rct_ctrl")?,
            ns.hazard(&ns.haz_comp_rct_ctrl, "haz_comp_rct_ctrl")?,
            &ns.cens_rct_ctrl,
            1.0 - e1,
        ),
        ProfileKind::Treated => (
            ns.hazard(&ns.haz_interest_trt, "haz_interest_trt")?,
            ns.hazard(&ns.haz_comp_trt, "haz_comp_trt")?,
            &ns.cens_rct_trt,
            e1,
        ),
    };
    let mut inputs = Inputs {
        main: eval(main),
        comp: eval(comp),
        cens: None,
        ext_comp: None,
        ext_cens: None,
        arm_prob,
        pi: None,
    };
    if let Some(t) = inputs.main.shares_jump_with(&inputs.comp) {
        return Err(Error::TiedCrossCause(t));
    }
    if with_weights {
        let cens_name = match kind {
            ProfileKind::Treated => "cens_rct_trt",
            _ => "cens_rct_ctrl",
        };
        inputs.cens = Some(eval(ns.hazard(cens, cens_name)?));
        if kind == ProfileKind::ControlFusion {
            let ext_comp = eval(ns.hazard(&ns.haz_comp_ext, "haz_comp_ext")?);
            if let Some(t) = inputs.main.shares_jump_with(&ext_comp) {
                return Err(Error::TiedCrossCause(t));
            }
            inputs.ext_comp = Some(ext_comp);
            inputs.ext_cens = Some(eval(ns.hazard(&ns.cens_ext, "cens_ext")?));
            inputs.pi = Some(ns.pi()?.probability(x));
        }
    }
    Ok(inputs)
}

impl Profile {
    /// Builds the profile of `x` under `kind`, covering jumps up to `horizon`.
    ///
    /// Without `with_weights` only the plug-in functions (survival, cumulative
    /// incidences and their areas) are available.
    pub fn build(
        ns: &NuisanceSet,
        kind: ProfileKind,
        x: &[f64],
        horizon: f64,
        with_weights: bool,
    ) -> Result<Self> {
        let inputs = load(ns, kind, x, horizon, with_weights)?;
        let optional = [&inputs.cens, &inputs.ext_comp, &inputs.ext_cens];
        let mut grid: Vec<f64> = inputs
            .main
            .times()
            .iter()
            .chain(inputs.comp.times())
            .chain(optional.iter().filter_map(|h| h.as_ref()).flat_map(|h| h.times()))
            .copied()
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let g = grid.len();

        let d = [on_grid(&inputs.main, &grid), on_grid(&inputs.comp, &grid)];
        let mut surv = Vec::with_capacity(g);
        let mut cif = [Vec::with_capacity(g), Vec::with_capacity(g)];
        let mut area = [Vec::with_capacity(g), Vec::with_capacity(g)];
        let (mut s, mut f, mut r, mut prev) = (1.0, [0.0; 2], [0.0; 2], 0.0);
        for i in 0..g {
            for j in 0..2 {
                r[j] += f[j] * (grid[i] - prev);
                area[j].push(r[j]);
            }
            f[0] += s * d[0][i];
            f[1] += s * d[1][i];
            s *= (1.0 - d[0][i]) * (1.0 - d[1][i]);
            surv.push(s);
            cif[0].push(f[0]);
            cif[1].push(f[1]);
            prev = grid[i];
        }

        let mut surv_c = vec![1.0; g];
        if let Some(cens) = &inputs.cens {
            let dc = on_grid(cens, &grid);
            let mut sc = 1.0;
            for i in 0..g {
                sc *= 1.0 - dc[i];
                surv_c[i] = sc;
            }
        }

        let mut profile = Profile {
            kind,
            grid,
            d,
            surv,
            surv_c,
            cif,
            area,
            weights: None,
            cap: ns.weight_cap,
        };
        if with_weights {
            profile.weights = Some(profile.weights(&inputs));
        }
        Ok(profile)
    }

    fn weights(&self, inputs: &Inputs) -> Weights {
        let g = self.grid.len();
        let arm = inputs.arm_prob;
        let h1: Vec<f64> = (0..g).map(|i| arm * self.surv[i] * self.surv_c[i]).collect();
        let (h_main, h0_main, ext) = match (&inputs.ext_comp, &inputs.ext_cens, inputs.pi) {
            (Some(ext_comp), Some(ext_cens), Some(pi)) => {
                let dc = on_grid(ext_comp, &self.grid);
                let dcc = on_grid(ext_cens, &self.grid);
                let mut e = 1.0;
                let ext: Vec<f64> = (0..g)
                    .map(|i| {
                        e *= (1.0 - self.d[0][i]) * (1.0 - dc[i]) * (1.0 - dcc[i]);
                        e
                    })
                    .collect();
                let h: Vec<f64> = (0..g).map(|i| pi * h1[i] + (1.0 - pi) * ext[i]).collect();
                (h, pi * arm + (1.0 - pi), ext)
            }
            _ => (h1.clone(), arm, Vec::new()),
        };

        let h = [h_main, h1];
        let h0 = [h0_main, arm];
        let mut first_bad = [None, None];
        let mut prefix: [[Prefix; 2]; 2] = Default::default();
        for k in 0..2 {
            for p in prefix[k].iter_mut() {
                p.a.reserve(g);
                p.b.reserve(g);
                p.c.reserve(g);
            }
            let (mut acc_a, mut acc_b, mut acc_c) = ([0.0; 2], [0.0; 2], [0.0; 2]);
            for i in 0..g {
                let dk = self.d[k][i];
                let m = if dk > 0.0 {
                    let h_left = if i == 0 { h0[k] } else { h[k][i - 1] };
                    if h_left > 0.0 {
                        dk * (1.0 / h_left).min(self.cap)
                    } else {
                        first_bad[k].get_or_insert(i);
                        0.0
                    }
                } else {
                    0.0
                };
                if m != 0.0 {
                    let s_left = if i == 0 { 1.0 } else { self.surv[i - 1] };
                    let q = guarded_inverse(dk);
                    let s = self.grid[i];
                    for j in 0..2 {
                        let own = if j == k { s_left } else { 0.0 };
                        let f = self.cif[j][i];
                        let r = self.area[j][i];
                        acc_a[j] += m * (own + q * f);
                        acc_b[j] += m * q;
                        acc_c[j] += m * (own * s + q * f * s - q * r);
                    }
                }
                for j in 0..2 {
                    prefix[k][j].a.push(acc_a[j]);
                    prefix[k][j].b.push(acc_b[j]);
                    prefix[k][j].c.push(acc_c[j]);
                }
            }
        }
        Weights {
            h,
            h0,
            first_bad,
            prefix,
            ext,
        }
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Number of grid points `<= t`.
    fn upto(&self, t: f64) -> usize {
        self.grid.partition_point(|&g| g <= t)
    }

    /// Number of grid points `< t`.
    fn before(&self, t: f64) -> usize {
        self.grid.partition_point(|&g| g < t)
    }

    fn at(values: &[f64], count: usize, initial: f64) -> f64 {
        if count == 0 {
            initial
        } else {
            values[count - 1]
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        Self::at(&self.surv, self.upto(t), 1.0)
    }

    pub fn survival_left(&self, t: f64) -> f64 {
        Self::at(&self.surv, self.before(t), 1.0)
    }

    pub fn censoring_survival(&self, t: f64) -> f64 {
        Self::at(&self.surv_c, self.upto(t), 1.0)
    }

    /// `F_j(t)` for `j` = 0 (cause 1) or 1 (cause 2).
    pub fn cif(&self, j: usize, t: f64) -> f64 {
        Self::at(&self.cif[j], self.upto(t), 0.0)
    }

    /// `∫_0^t F_j(u) du`, exact for the step function.
    pub fn cif_area(&self, j: usize, t: f64) -> f64 {
        let k = self.upto(t);
        if k == 0 {
            return 0.0;
        }
        self.area[j][k - 1] + self.cif[j][k - 1] * (t - self.grid[k - 1])
    }

    fn jump(&self, k: usize, s: f64) -> f64 {
        let i = self.before(s);
        if i < self.grid.len() && self.grid[i] == s {
            self.d[k][i]
        } else {
            0.0
        }
    }

    fn require_weights(&self) -> &Weights {
        self.weights
            .as_ref()
            .expect("profile built without inverse weights")
    }

    /// `H(s−)` for the given integrator, without capping.
    pub(crate) fn h_left(&self, integrator: Integrator, s: f64) -> f64 {
        let w = self.require_weights();
        let k = integrator.index();
        Self::at(&w.h[k], self.before(s), w.h0[k])
    }

    fn capped_inverse(&self, h: f64, record: &str, s: f64) -> Result<f64> {
        if h > 0.0 {
            Ok((1.0 / h).min(self.cap))
        } else {
            Err(Error::Positivity {
                record: record.to_string(),
                time: s,
            })
        }
    }

    /// `∫_(0,t] W_kj(t,s)/H(s−) dM_k(s)` for one subject, or its time integral over
    /// `(0, t]` when `gamma` is set.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn martingale(
        &self,
        integrator: Integrator,
        record: &str,
        time: f64,
        cause: Cause,
        j: usize,
        t: f64,
        gamma: bool,
    ) -> Result<f64> {
        let w = self.require_weights();
        let k = integrator.index();
        let ft = self.cif(j, t);
        let rt = self.cif_area(j, t);

        let n = self.upto(time.min(t));
        if let Some(bad) = w.first_bad[k] {
            if bad < n {
                return Err(Error::Positivity {
                    record: record.to_string(),
                    time: self.grid[bad],
                });
            }
        }
        let compensator = if n == 0 {
            0.0
        } else {
            let p = &w.prefix[k][j];
            if gamma {
                t * p.a[n - 1] - p.c[n - 1] - rt * p.b[n - 1]
            } else {
                p.a[n - 1] - ft * p.b[n - 1]
            }
        };

        let mut event = 0.0;
        if cause == integrator.cause() && time <= t {
            let s = time;
            let inv = self.capped_inverse(self.h_left(integrator, s), record, s)?;
            let own = if j == k { self.survival_left(s) } else { 0.0 };
            let q = guarded_inverse(self.jump(k, s));
            let fs = self.cif(j, s);
            let weight = if gamma {
                own * (t - s) - q * (rt - self.cif_area(j, s) - fs * (t - s))
            } else {
                own - q * (ft - fs)
            };
            event = inv * weight;
        }
        Ok(event - compensator)
    }

    /// One subject's term of the variance-reduction integral (before the
    /// `π(1−π)/α²` factor): `Σ_{s ≤ t} (S₀S₀ᶜ)(s−)/(H₁H_·)(s−)·W₁₁(t,s)²·(1−ΔA)ΔA`.
    pub(crate) fn reduction_integral(&self, t: f64, record: &str) -> Result<f64> {
        assert_eq!(self.kind, ProfileKind::ControlFusion);
        let w = self.require_weights();
        let f_t = self.cif(0, t);
        let mut total = 0.0;
        for i in 0..self.upto(t) {
            let d = self.d[0][i];
            if d <= 0.0 {
                continue;
            }
            let s = self.grid[i];
            let left = |v: &[f64], init: f64| if i == 0 { init } else { v[i - 1] };
            let ext = left(&w.ext, 1.0);
            let inv_dot = self.capped_inverse(left(&w.h[0], w.h0[0]), record, s)?;
            let inv_one = self.capped_inverse(left(&w.h[1], w.h0[1]), record, s)?;
            let s_left = left(&self.surv, 1.0);
            let w11 = s_left - guarded_inverse(d) * (f_t - self.cif[0][i]);
            total += ext * inv_dot * inv_one * w11 * w11 * (1.0 - d) * d;
        }
        Ok(total)
    }
}

/// Point evaluations of the derived nuisance quantities at `(t, horizon)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedQuantities {
    pub s1: f64,
    pub s0: f64,
    pub f_at_t: f64,
    pub f_at_horizon: f64,
    pub s1c: f64,
    pub s0c: f64,
    /// `H_·(t−)` (equals `H_1(t−)` outside fusion).
    pub h_dot: f64,
    /// `H_1(t−)`.
    pub h_1: f64,
    /// `W_1j(horizon, t)`, with the pooled cause-1 hazard under control.
    pub w_1j: f64,
    /// `W_2j(horizon, t)`.
    pub w_2j: f64,
}

/// Evaluates the derived quantities for covariates `x`.
///
/// Control arm quantities use the pooled cause-1 hazard when external-control
/// nuisances are present and the trial-only fit otherwise.
pub fn derived_quantities(
    ns: &NuisanceSet,
    x: &[f64],
    arm: Arm,
    cause: Cause,
    t: f64,
    horizon: f64,
) -> Result<DerivedQuantities> {
    if t > horizon {
        return Err(Error::Config(format!("t = {t} exceeds horizon {horizon}")));
    }
    let j = cause_index(cause)?;
    let fusion = arm == Arm::Control && ns.pi.is_some() && ns.haz_comp_ext.is_some();
    let kind = match (arm, fusion) {
        (Arm::Treated, _) => ProfileKind::Treated,
        (Arm::Control, true) => ProfileKind::ControlFusion,
        (Arm::Control, false) => ProfileKind::ControlRctOnly,
    };
    let p = Profile::build(ns, kind, x, horizon, true)?;
    let w = p.require_weights();
    let h_dot = p.h_left(Integrator::Main, t);
    let h_1 = p.h_left(Integrator::Comp, t);
    let f_h = p.cif(j, horizon);
    let f_t = p.cif(j, t);
    let s_left = p.survival_left(t);
    let w_of = |k: usize| {
        let own = if j == k { s_left } else { 0.0 };
        own - guarded_inverse(p.jump(k, t)) * (f_h - f_t)
    };
    let (s0, s0c) = if fusion {
        // S₀ and S₀ᶜ are only stored as a product; recover them separately
        let ext_comp = ns
            .hazard(&ns.haz_comp_ext, "haz_comp_ext")?
            .cumulative_hazard(x, horizon);
        let main = ns
            .hazard(&ns.haz_interest_pooled, "haz_interest_pooled")?
            .cumulative_hazard(x, horizon);
        let s0 = crate::survival::product_integral(&main, t)
            * crate::survival::product_integral(&ext_comp, t);
        let ext = Profile::at(&w.ext, p.upto(t), 1.0);
        (s0, if s0 > 0.0 { ext / s0 } else { 1.0 })
    } else {
        (p.survival(t), p.censoring_survival(t))
    };
    Ok(DerivedQuantities {
        s1: p.survival(t),
        s0,
        f_at_t: f_t,
        f_at_horizon: f_h,
        s1c: p.censoring_survival(t),
        s0c,
        h_dot,
        h_1,
        w_1j: w_of(0),
        w_2j: w_of(1),
    })
}
