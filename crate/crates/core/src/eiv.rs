//! Polynomial regression with a mismeasured covariate.
//!
//! With `W = X + eps` the raw monomials `W^k` are biased proxies for `X^k`.
//! The corrected monomials `H_k(W)` satisfy `E[H_k(W) | X] = X^k` for a
//! symmetric error distribution with variance `mu2` and fourth moment
//! `mu4`, so replacing `X^k` by `H_k(W)` in the least-squares normal
//! equations yields consistent coefficient estimates despite the
//! measurement error (an adjusted-least-squares fit).

use crate::error_model::ErrorMoments;
use crate::{binom, check_finite, Error, Result};
use nalgebra::{DMatrix, DVector};

/// Threshold on the condition number of the corrected normal-equation
/// matrix beyond which a ridge is applied before solving.
pub(crate) const RIDGE_COND_THRESHOLD: f64 = 1e12;
/// Relative size of the ridge added to the diagonal in that case.
pub(crate) const RIDGE_SCALE: f64 = 1e-8;

/// A polynomial regression function `g(x) = theta_0 + theta_1 x + ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricModel {
    /// Polynomial degree (at least 1).
    pub degree: usize,
    /// Coefficients, length `degree + 1`, constant term first.
    pub theta: Vec<f64>,
}

impl ParametricModel {
    /// Builds a model from its coefficient vector (constant term first).
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.len() < 2 {
            return Err(Error::InputShapeMismatch(format!(
                "polynomial needs degree >= 1 (at least 2 coefficients), got {}",
                theta.len()
            )));
        }
        check_finite("theta", &theta)?;
        Ok(ParametricModel {
            degree: theta.len() - 1,
            theta,
        })
    }

    /// Evaluates `g(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.theta.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    /// Taylor coefficients of the shifted polynomial:
    /// `g(w + x) = sum_l a_l(w) x^l` with
    /// `a_l(w) = sum_{k >= l} theta_k C(k, l) w^{k-l}`.
    pub fn shift_coefs(&self, w: f64) -> Vec<f64> {
        let d = self.degree;
        let mut out = vec![0.0; d + 1];
        for (l, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in (l..=d).rev() {
                acc = acc * w + self.theta[k] * binom(k, l);
            }
            *slot = acc;
        }
        out
    }
}

/// Result of an adjusted-least-squares fit.
#[derive(Debug, Clone)]
pub struct AlsFit {
    /// Estimated coefficients, constant term first.
    pub theta_hat: Vec<f64>,
    /// Condition number of the corrected normal-equation matrix.
    pub cond: f64,
    /// Whether a stabilising ridge was added before solving.
    pub ridge_applied: bool,
}

/// The bias-corrected monomial `H_k(w)`, `k <= 4`, satisfying
/// `E[H_k(X + eps) | X] = X^k` for symmetric `eps` with raw moments
/// `mu2`, `mu4`.
///
/// # Panics
/// Panics if `k > 4`; higher orders are never needed for the supported
/// fit degrees.
pub fn corrected_monomial(k: usize, w: f64, moments: &ErrorMoments) -> f64 {
    let ErrorMoments { mu2, mu4 } = *moments;
    match k {
        0 => 1.0,
        1 => w,
        2 => w * w - mu2,
        3 => w * w * w - 3.0 * mu2 * w,
        4 => w * w * w * w - 6.0 * mu2 * w * w + 6.0 * mu2 * mu2 - mu4,
        _ => panic!("corrected monomials are defined for k <= 4, got k = {k}"),
    }
}

/// Fits a degree-`degree` polynomial of the latent covariate by solving
/// the corrected normal equations `M theta = v`, where
/// `M[j][k] = mean H_{j+k}(W_i)` and `v[j] = mean Y_i H_j(W_i)`.
///
/// If `M` has condition number above 1e12 a small ridge proportional to
/// its mean diagonal is added (and flagged); a system that remains
/// unsolvable is reported as [`Error::SingularDesign`].
pub fn als_fit(y: &[f64], w: &[f64], degree: usize, moments: &ErrorMoments) -> Result<AlsFit> {
    if y.len() != w.len() {
        return Err(Error::InputShapeMismatch(format!(
            "y and w must have equal length, got {} and {}",
            y.len(),
            w.len()
        )));
    }
    if !(1..=2).contains(&degree) {
        return Err(Error::InputShapeMismatch(format!(
            "fit degree must be 1 or 2, got {degree}"
        )));
    }
    let n = y.len();
    let p = degree + 1;
    if n < 10 * p {
        return Err(Error::InputShapeMismatch(format!(
            "need at least {} observations for degree {degree}, got {n}",
            10 * p
        )));
    }
    check_finite("y", y)?;
    check_finite("w", w)?;

    let inv_n = 1.0 / n as f64;
    let mut m = DMatrix::<f64>::zeros(p, p);
    let mut v = DVector::<f64>::zeros(p);
    for order in 0..=(2 * degree) {
        let mean_h: f64 = w
            .iter()
            .map(|&wi| corrected_monomial(order, wi, moments))
            .sum::<f64>()
            * inv_n;
        for j in 0..p {
            for k in 0..p {
                if j + k == order {
                    m[(j, k)] = mean_h;
                }
            }
        }
    }
    for j in 0..p {
        let mean_yh: f64 = y
            .iter()
            .zip(w)
            .map(|(&yi, &wi)| yi * corrected_monomial(j, wi, moments))
            .sum::<f64>()
            * inv_n;
        v[j] = mean_yh;
    }

    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    let mut ridge_applied = false;
    let mut m_solve = m;
    if !cond.is_finite() || cond > RIDGE_COND_THRESHOLD {
        let bump = RIDGE_SCALE * m_solve.trace() / p as f64;
        for j in 0..p {
            m_solve[(j, j)] += bump;
        }
        ridge_applied = true;
    }

    let theta = m_solve
        .lu()
        .solve(&v)
        .ok_or(Error::SingularDesign { cond })?;
    let theta_hat: Vec<f64> = theta.iter().copied().collect();
    if theta_hat.iter().any(|t| !t.is_finite()) {
        return Err(Error::SingularDesign { cond });
    }
    Ok(AlsFit {
        theta_hat,
        cond,
        ridge_applied,
    })
}
