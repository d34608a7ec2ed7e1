//! Step-function cumulative hazards and the product-integral calculus built on them.
//!
//! Every hazard in the crate is a finite, right-continuous step function
//! `A(t) = Σ_{s ≤ t} ΔA(s)` with jumps in `[0, 1]`. Left limits `A(t−)` are
//! first-class: almost every estimating equation evaluates survival and
//! inverse weights just before a jump.

use crate::error::{Error, Result};

/// A càdlàg, non-decreasing step function with jumps no larger than one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CumulativeHazard {
    times: Vec<f64>,
    jumps: Vec<f64>,
}

impl CumulativeHazard {
    /// The identically-zero hazard.
    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds a hazard from jump times and sizes, validating every invariant.
    pub fn new(times: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if times.len() != jumps.len() {
            return Err(Error::InvalidHazard(format!(
                "{} jump times but {} jump sizes",
                times.len(),
                jumps.len()
            )));
        }
        let mut prev = 0.0;
        for (&t, &d) in times.iter().zip(&jumps) {
            if !(t.is_finite() && t > prev) {
                return Err(Error::InvalidHazard(format!(
                    "jump times must be positive, finite and strictly increasing (got {t} after {prev})"
                )));
            }
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::InvalidHazard(format!("jump of size {d} at t = {t}")));
            }
            prev = t;
        }
        Ok(Self { times, jumps })
    }

    /// Builds a hazard from `(time, jump)` pairs in any order; jumps at equal times are summed.
    pub fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut jumps: Vec<f64> = Vec::with_capacity(pairs.len());
        for (t, d) in pairs {
            match times.last() {
                Some(&last) if last == t => *jumps.last_mut().unwrap() += d,
                _ => {
                    times.push(t);
                    jumps.push(d);
                }
            }
        }
        Self::new(times, jumps)
    }

    /// Caller guarantees the invariants (used on hot paths after clamping).
    pub(crate) fn from_parts_unchecked(times: Vec<f64>, jumps: Vec<f64>) -> Self {
        debug_assert!(Self::new(times.clone(), jumps.clone()).is_ok());
        Self { times, jumps }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of jumps at times `<= t`.
    fn count_upto(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Number of jumps at times `< t`.
    fn count_before(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }

    /// `A(t)`: total mass of jumps at times `<= t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.jumps[..self.count_upto(t)].iter().sum()
    }

    /// `A(t−)`: total mass of jumps strictly before `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        self.jumps[..self.count_before(t)].iter().sum()
    }

    /// `ΔA(t)`, zero unless `t` is exactly a stored jump time.
    pub fn jump_at(&self, t: f64) -> f64 {
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => self.jumps[i],
            Err(_) => 0.0,
        }
    }

    /// Restriction to jumps at times `<= t`.
    pub fn truncate(&self, t: f64) -> Self {
        let k = self.count_upto(t);
        Self {
            times: self.times[..k].to_vec(),
            jumps: self.jumps[..k].to_vec(),
        }
    }

    /// Pointwise sum; fails when a merged jump exceeds one.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = self
            .times
            .iter()
            .copied()
            .zip(self.jumps.iter().copied())
            .collect();
        pairs.extend(other.times.iter().copied().zip(other.jumps.iter().copied()));
        Self::from_pairs(pairs)
    }

    /// True when the two hazards share at least one jump time.
    pub fn shares_jump_with(&self, other: &Self) -> Option<f64> {
        let (mut i, mut j) = (0, 0);
        while i < self.times.len() && j < other.times.len() {
            let (a, b) = (self.times[i], other.times[j]);
            if a == b {
                return Some(a);
            }
            if a < b {
                i += 1;
            } else {
                j += 1;
            }
        }
        None
    }
}

/// `(ΠA)(t) = Π_{s ≤ t} (1 − ΔA(s))`.
pub fn product_integral(a: &CumulativeHazard, t: f64) -> f64 {
    a.jumps[..a.count_upto(t)]
        .iter()
        .fold(1.0, |acc, d| acc * (1.0 - d))
}

/// `(ΠA)(t−)`, the product over jumps strictly before `t`.
pub fn product_integral_left(a: &CumulativeHazard, t: f64) -> f64 {
    a.jumps[..a.count_before(t)]
        .iter()
        .fold(1.0, |acc, d| acc * (1.0 - d))
}

/// Lebesgue–Stieltjes sum `Σ_{from < s ≤ to} f(s) ΔA(s)`.
///
/// `f` is evaluated at the jump time itself; callers wanting a left limit pass
/// it explicitly, e.g. `|s| product_integral_left(&a, s)`.
pub fn stieltjes_integral<F>(f: F, a: &CumulativeHazard, from: f64, to: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    let lo = a.count_upto(from);
    let hi = a.count_upto(to);
    if hi <= lo {
        return 0.0;
    }
    a.times[lo..hi]
        .iter()
        .zip(&a.jumps[lo..hi])
        .map(|(&s, &d)| f(s) * d)
        .sum()
}

/// Residual of the Duhamel equation on `(0, t]`:
///
/// `Π(1−dA) − Π(1−dB) − ∫ Π_{(0,u)}(1−dA) d(B−A)(u) Π_{(u,t]}(1−dB)`.
pub fn duhamel_residual(a: &CumulativeHazard, b: &CumulativeHazard, t: f64) -> f64 {
    let grid = merged_grid(&[a, b], t);
    let da: Vec<f64> = grid.iter().map(|&s| a.jump_at(s)).collect();
    let db: Vec<f64> = grid.iter().map(|&s| b.jump_at(s)).collect();

    // suffix[k] = Π_{i > k} (1 − ΔB(s_i))
    let mut suffix = vec![1.0; grid.len()];
    for k in (0..grid.len().saturating_sub(1)).rev() {
        suffix[k] = suffix[k + 1] * (1.0 - db[k + 1]);
    }

    let mut prefix_a = 1.0;
    let mut rhs = 0.0;
    for k in 0..grid.len() {
        rhs += prefix_a * (db[k] - da[k]) * suffix[k];
        prefix_a *= 1.0 - da[k];
    }
    let lhs = product_integral(a, t) - product_integral(b, t);
    lhs - rhs
}

/// Residual of the backward equation `Π(1−dA)(0,t] − 1 + ∫ Π_{(u,t]}(1−dA) dA(u)`.
pub fn backward_residual(a: &CumulativeHazard, t: f64) -> f64 {
    let k = a.count_upto(t);
    let mut tail = 1.0;
    let mut integral = 0.0;
    for i in (0..k).rev() {
        integral += tail * a.jumps[i];
        tail *= 1.0 - a.jumps[i];
    }
    product_integral(a, t) - 1.0 + integral
}

/// Residual of integration by parts for the step functions `F = A` and `G = B`:
/// `F(t)G(t) − ∫ F(u−) dG(u) − ∫ G(u) dF(u)`.
pub fn integration_by_parts_residual(f: &CumulativeHazard, g: &CumulativeHazard, t: f64) -> f64 {
    let lhs = f.eval(t) * g.eval(t);
    let first = stieltjes_integral(|u| f.eval_left(u), g, 0.0, t);
    let second = stieltjes_integral(|u| g.eval(u), f, 0.0, t);
    lhs - first - second
}

/// Cumulative incidence `∫_0^t (Π(A₁+A₂))(s−) dA₁(s)` for disjoint-jump cause-specific hazards.
pub fn aalen_johansen(
    haz_interest: &CumulativeHazard,
    haz_competing: &CumulativeHazard,
    t: f64,
) -> Result<f64> {
    if let Some(s) = haz_interest.shares_jump_with(haz_competing) {
        return Err(Error::TiedCrossCause(s));
    }
    let grid = merged_grid(&[haz_interest, haz_competing], t);
    let mut surv = 1.0;
    let mut cif = 0.0;
    for s in grid {
        let d1 = haz_interest.jump_at(s);
        let d2 = haz_competing.jump_at(s);
        cif += surv * d1;
        surv *= 1.0 - d1 - d2;
    }
    Ok(cif)
}

/// Sorted union of the jump times of `hazards` up to and including `t`.
pub(crate) fn merged_grid(hazards: &[&CumulativeHazard], t: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = hazards
        .iter()
        .flat_map(|h| h.times[..h.count_upto(t)].iter().copied())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn haz(pairs: &[(f64, f64)]) -> CumulativeHazard {
        CumulativeHazard::from_pairs(pairs.to_vec()).unwrap()
    }

    #[test]
    fn eval_and_left_limits() {
        assert_eq!(CumulativeHazard::zero().eval(5.0), 0.0);
        let a = haz(&[(1.0, 0.3)]);
        assert_eq!(a.eval(1.0), 0.3);
        assert_eq!(a.eval_left(1.0), 0.0);
        let b = haz(&[(1.0, 0.1), (2.0, 0.2)]);
        assert_eq!(b.eval(1.5), 0.1);
        assert_eq!(b.eval_left(2.0), 0.1);
        assert_eq!(b.jump_at(2.0), 0.2);
        assert_eq!(b.jump_at(1.5), 0.0);
    }

    #[test]
    fn rejects_invalid_jumps() {
        assert!(CumulativeHazard::new(vec![1.0], vec![1.2]).is_err());
        assert!(CumulativeHazard::new(vec![2.0, 1.0], vec![0.1, 0.1]).is_err());
        assert!(CumulativeHazard::new(vec![0.0], vec![0.1]).is_err());
        assert!(CumulativeHazard::new(vec![1.0], vec![-0.1]).is_err());
        assert!(haz(&[(1.0, 0.6)]).sum(&haz(&[(1.0, 0.6)])).is_err());
    }

    #[test]
    fn finite_products() {
        assert_eq!(product_integral(&CumulativeHazard::zero(), 3.0), 1.0);
        let b = haz(&[(1.0, 0.1), (2.0, 0.2)]);
        assert_abs_diff_eq!(product_integral(&b, 2.0), 0.72, epsilon = 1e-15);
        let dead = haz(&[(1.0, 1.0), (2.0, 0.5)]);
        assert_eq!(product_integral(&dead, 1.0), 0.0);
        assert_eq!(product_integral(&dead, 5.0), 0.0);
    }

    #[test]
    fn product_integral_approaches_exponential() {
        // A(t) = 0.5 t discretised on a 1e-4 mesh
        let h = 1e-4;
        let m = 10_000;
        let times: Vec<f64> = (1..=m).map(|k| k as f64 * h).collect();
        let a = CumulativeHazard::new(times, vec![0.5 * h; m]).unwrap();
        let expected = (-0.5f64).exp();
        assert!((product_integral(&a, 1.0) - expected).abs() < 1e-3);
        assert_abs_diff_eq!(expected, 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn stieltjes_sums() {
        let a = haz(&[(1.0, 0.5), (2.0, 0.5)]);
        assert_eq!(stieltjes_integral(|_| 1.0, &a, 0.0, 2.0), a.eval(2.0));
        assert_eq!(stieltjes_integral(|_| 0.0, &a, 0.0, 2.0), 0.0);
        let v = stieltjes_integral(|s| product_integral_left(&a, s), &a, 0.0, 2.0);
        assert_abs_diff_eq!(v, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 1.0 - product_integral(&a, 2.0), epsilon = 1e-15);
        // half-open interval (from, to]
        assert_eq!(stieltjes_integral(|_| 1.0, &a, 1.0, 2.0), 0.5);
    }

    #[test]
    fn duhamel_hand_cases() {
        let a = haz(&[(1.0, 0.3), (2.5, 0.4)]);
        assert_eq!(duhamel_residual(&a, &a, 3.0), 0.0);
        let single = haz(&[(1.0, 0.2)]);
        for t in [1.0, 1.5, 7.0] {
            assert!(duhamel_residual(&single, &CumulativeHazard::zero(), t).abs() < 1e-12);
        }
    }

    #[test]
    fn aalen_johansen_three_subjects() {
        // (1, cause 1), (2, cause 2), (3, censored)
        let a1 = haz(&[(1.0, 1.0 / 3.0)]);
        let a2 = haz(&[(2.0, 0.5)]);
        assert_abs_diff_eq!(aalen_johansen(&a1, &a2, 3.0).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(aalen_johansen(&a2, &a1, 3.0).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(aalen_johansen(&a1, &a2, 0.5).unwrap(), 0.0);
        let certain = haz(&[(1.0, 1.0)]);
        assert_eq!(aalen_johansen(&certain, &CumulativeHazard::zero(), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn aalen_johansen_rejects_shared_jumps() {
        let a1 = haz(&[(1.0, 0.2)]);
        let a2 = haz(&[(1.0, 0.1)]);
        assert!(matches!(
            aalen_johansen(&a1, &a2, 2.0),
            Err(Error::TiedCrossCause(t)) if t == 1.0
        ));
    }
}
