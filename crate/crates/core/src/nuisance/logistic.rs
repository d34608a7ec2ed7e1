//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const SEPARATION_NORM: f64 = 1e3;
const MAX_HALVINGS: usize = 10;
const SEPARATION_FIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticFit {
    /// A fixed model, e.g. a known selection score.
    pub fn fixed(intercept: f64, coefficients: Vec<f64>) -> Self {
        Self {
            intercept,
            coefficients,
            converged: true,
            iterations: 0,
        }
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    /// Predicted probability, kept strictly inside (0, 1).
    pub fn predict(&self, x: &[f64]) -> f64 {
        expit(self.linear_predictor(x)).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
    }
}

pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(design: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &yi)| {
            // y·η − log(1 + e^η), stable for large |η|
            let softplus = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            yi * e - softplus
        })
        .sum()
}

/// Fits `P(label = 1 | x) = expit(b₀ + bᵀx)`.
///
/// `features` holds one row per observation; rows may be empty for an
/// intercept-only fit.
pub fn fit_logistic(features: &[Vec<f64>], labels: &[bool]) -> Result<LogisticFit> {
    let n = features.len();
    if n == 0 || labels.len() != n {
        return Err(Error::Config(format!(
            "logistic fit needs matching non-empty features ({n}) and labels ({})",
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::DegenerateLabels);
    }
    let p = features[0].len();
    if features.iter().any(|r| r.len() != p) {
        return Err(Error::Config("ragged feature matrix".into()));
    }

    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { features[i][j - 1] });
    let y = DVector::from_iterator(n, labels.iter().map(|&l| if l { 1.0 } else { 0.0 }));
    let mut beta = DVector::zeros(p + 1);
    // Start the intercept at the marginal log-odds.
    let rate = positives as f64 / n as f64;
    beta[0] = (rate / (1.0 - rate)).ln();
    let mut loglik = log_likelihood(&design, &y, &beta);

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..MAX_ITER {
        let eta = &design * &beta;
        let prob = eta.map(expit);
        let score = design.transpose() * (&y - &prob);
        if score.amax() < SCORE_TOL {
            converged = true;
            break;
        }
        let weights = prob.map(|q| q * (1.0 - q));
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let info = design.transpose() * weighted;
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .or_else(|| info.lu().solve(&score))
            .ok_or(Error::Singular)?;

        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_ll = log_likelihood(&design, &y, &candidate);
        let mut halvings = 0;
        while (cand_ll < loglik || cand_ll.is_nan()) && halvings < MAX_HALVINGS {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_ll = log_likelihood(&design, &y, &candidate);
            halvings += 1;
        }
        iterations += 1;
        if cand_ll.is_finite() && cand_ll >= loglik {
            beta = candidate;
            loglik = cand_ll;
        } else {
            // no ascent possible along the Newton direction
            let eta = &design * &beta;
            let score = design.transpose() * (&y - eta.map(expit));
            converged = score.amax() < SCORE_TOL;
            break;
        }
        if beta.norm() > SEPARATION_NORM {
            return Err(Error::Separation { norm: beta.norm() });
        }
    }

    // complete separation drives every fitted probability onto its label
    let fitted = (&design * &beta).map(expit);
    if (0..n).all(|i| (y[i] - fitted[i]).abs() < SEPARATION_FIT) {
        return Err(Error::Separation { norm: beta.norm() });
    }

    Ok(LogisticFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intercept_only_closed_form() {
        let x = vec![vec![]; 4];
        let fit = fit_logistic(&x, &[true, true, true, false]).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.intercept, 3f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(fit.intercept, 1.0986, epsilon = 1e-4);
    }

    #[test]
    fn zero_model_predicts_half() {
        assert_eq!(LogisticFit::fixed(0.0, vec![0.0, 0.0]).predict(&[0.0, 0.0]), 0.5);
    }

    #[test]
    fn degenerate_and_separated_labels() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(fit_logistic(&x, &[true, true]), Err(Error::DegenerateLabels)));
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        assert!(matches!(fit_logistic(&x, &y), Err(Error::Separation { .. })));
    }

    #[test]
    fn score_vanishes_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let y: Vec<bool> = x
            .iter()
            .map(|r| rng.gen::<f64>() < expit(0.3 + r[0] - 0.5 * r[1]))
            .collect();
        let fit = fit_logistic(&x, &y).unwrap();
        assert!(fit.converged);
        let mut score = [0.0; 3];
        for (r, &l) in x.iter().zip(&y) {
            let resid = f64::from(u8::from(l)) - expit(fit.linear_predictor(r));
            score[0] += resid;
            score[1] += resid * r[0];
            score[2] += resid * r[1];
        }
        assert!(score.iter().all(|s| s.abs() < 1e-8), "{score:?}");
    }
}
