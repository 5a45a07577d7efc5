//! Measurement-error distribution models.
//!
//! The observed regressor is `W = X + eps` with `eps` symmetric around zero
//! and independent of `X`. Everything downstream consumes the error model
//! through its characteristic function `f_eps^ft` (and that function's
//! reciprocal), its variance, and its low-order moments. Three models are
//! supported:
//!
//! * [`ErrorModel::KnownLaplace`] — `f_eps^ft(t) = 1 / (1 + lambda2 t^2)`,
//!   a polynomially decaying ("ordinary smooth") tail;
//! * [`ErrorModel::KnownGaussian`] — `f_eps^ft(t) = exp(-mu t^2)`, an
//!   exponentially decaying ("supersmooth") tail;
//! * [`ErrorModel::Estimated`] — the modulus `|f_eps^ft|` estimated from
//!   within-unit differences `D = W - W^r` of repeated measurements, using
//!   `E cos(tD) = |f_eps^ft(t)|^2` for symmetric errors.

use crate::{Error, Result};

/// Hard ceiling on the exponent fed to `exp` inside reciprocal-CF
/// evaluations; beyond it the deconvolution weight overflows f64.
const EXP_CAP: f64 = 700.0;

/// Second and fourth moments of the measurement error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMoments {
    /// `E eps^2`.
    pub mu2: f64,
    /// `E eps^4`.
    pub mu4: f64,
}

/// Distribution model for the additive measurement error.
#[derive(Debug, Clone)]
pub enum ErrorModel {
    /// Laplace error with characteristic function `1 / (1 + lambda2 t^2)`
    /// (variance `2 lambda2`).
    KnownLaplace { lambda2: f64 },
    /// Centered Gaussian error with characteristic function `exp(-mu t^2)`
    /// (variance `2 mu`).
    KnownGaussian { mu: f64 },
    /// Error CF modulus estimated from repeated-measurement differences.
    Estimated {
        /// Within-unit differences `D_i = W_i - W_i^r` (distribution of
        /// `eps - eps'`).
        diffs: Vec<f64>,
        /// Lower bound applied to the estimated CF before inversion, keeping
        /// the deconvolution weight bounded where the estimate is noisy.
        ridge_floor: f64,
    },
}

impl ErrorModel {
    /// Builds an [`ErrorModel::Estimated`] with the default ridge floor
    /// `len(diffs)^(-1/2)`.
    pub fn estimated(diffs: Vec<f64>) -> Self {
        let floor = (diffs.len().max(1) as f64).powf(-0.5);
        ErrorModel::Estimated {
            diffs,
            ridge_floor: floor,
        }
    }

    /// Characteristic function of the error at frequency `t` (for the
    /// estimated model: the floored modulus estimate, which is the quantity
    /// actually inverted downstream).
    pub fn cf_eval(&self, t: f64) -> f64 {
        match self {
            ErrorModel::KnownLaplace { lambda2 } => 1.0 / (1.0 + lambda2 * t * t),
            ErrorModel::KnownGaussian { mu } => (-mu * t * t).exp(),
            ErrorModel::Estimated { diffs, ridge_floor } => {
                let n = diffs.len().max(1) as f64;
                let mean_cos: f64 = diffs.iter().map(|d| (t * d).cos()).sum::<f64>() / n;
                mean_cos.abs().sqrt().max(*ridge_floor)
            }
        }
    }

    /// Reciprocal characteristic function `1 / f_eps^ft(t)`, guarding
    /// against floating overflow for the supersmooth model.
    pub fn inv_cf_eval(&self, t: f64) -> Result<f64> {
        match self {
            ErrorModel::KnownLaplace { lambda2 } => Ok(1.0 + lambda2 * t * t),
            ErrorModel::KnownGaussian { mu } => {
                let arg = mu * t * t;
                if arg > EXP_CAP {
                    Err(Error::UnstableDeconvolution { t })
                } else {
                    Ok(arg.exp())
                }
            }
            ErrorModel::Estimated { .. } => Ok(1.0 / self.cf_eval(t)),
        }
    }

    /// Error variance implied by the model.
    pub fn sigma2(&self) -> f64 {
        match self {
            ErrorModel::KnownLaplace { lambda2 } => 2.0 * lambda2,
            ErrorModel::KnownGaussian { mu } => 2.0 * mu,
            ErrorModel::Estimated { diffs, .. } => {
                // Var(D) = Var(eps) + Var(eps') = 2 Var(eps).
                let n = diffs.len().max(1) as f64;
                diffs.iter().map(|d| d * d).sum::<f64>() / n / 2.0
            }
        }
    }

    /// Closed-form moments for the two known models; `None` for the
    /// estimated model (use [`ErrorModel::moments`] or
    /// [`estimate_moments`]).
    pub fn known_moments(&self) -> Option<ErrorMoments> {
        match self {
            ErrorModel::KnownLaplace { lambda2 } => Some(ErrorMoments {
                mu2: 2.0 * lambda2,
                mu4: 24.0 * lambda2 * lambda2,
            }),
            ErrorModel::KnownGaussian { mu } => Some(ErrorMoments {
                mu2: 2.0 * mu,
                mu4: 12.0 * mu * mu,
            }),
            ErrorModel::Estimated { .. } => None,
        }
    }

    /// Second and fourth error moments: closed form for known models,
    /// method-of-moments estimates from the differences otherwise.
    pub fn moments(&self) -> ErrorMoments {
        match self {
            ErrorModel::Estimated { diffs, .. } => estimate_moments(diffs),
            known => known.known_moments().expect("known model has moments"),
        }
    }

    /// Taylor coefficients are unavailable for the raw estimated CF; this
    /// returns the derivatives `d^l/dv^l [1/f_eps^ft(v)]` for `l = 0..=lmax`
    /// at the point `v`, using the exact closed form for known models and
    /// the fourth-order moment expansion
    /// `1/f_eps^ft(v) ~= 1 + (mu2/2) v^2 + ((6 mu2^2 - mu4)/24) v^4`
    /// for the estimated model.
    pub(crate) fn recip_cf_derivs(&self, v: f64, lmax: usize) -> Vec<f64> {
        match self {
            ErrorModel::KnownLaplace { lambda2 } => {
                let mut d = vec![0.0; lmax + 1];
                d[0] = 1.0 + lambda2 * v * v;
                if lmax >= 1 {
                    d[1] = 2.0 * lambda2 * v;
                }
                if lmax >= 2 {
                    d[2] = 2.0 * lambda2;
                }
                d
            }
            ErrorModel::KnownGaussian { mu } => {
                // d^l/dv^l exp(mu v^2) = P_l(v) exp(mu v^2) with
                // P_{l+1} = P_l' + 2 mu v P_l.
                let e = (mu * v * v).exp();
                let mut p = vec![1.0f64]; // polynomial coefficients of P_l
                let mut out = Vec::with_capacity(lmax + 1);
                for _ in 0..=lmax {
                    let val: f64 = p
                        .iter()
                        .rev()
                        .fold(0.0, |acc, &c| acc * v + c);
                    out.push(val * e);
                    let mut next = vec![0.0; p.len() + 1];
                    for (j, &c) in p.iter().enumerate() {
                        if j >= 1 {
                            next[j - 1] += j as f64 * c;
                        }
                        next[j + 1] += 2.0 * mu * c;
                    }
                    p = next;
                }
                out
            }
            ErrorModel::Estimated { .. } => {
                let ErrorMoments { mu2, mu4 } = self.moments();
                let c4 = (6.0 * mu2 * mu2 - mu4) / 24.0;
                let mut d = vec![0.0; lmax + 1];
                d[0] = 1.0 + 0.5 * mu2 * v * v + c4 * v.powi(4);
                if lmax >= 1 {
                    d[1] = mu2 * v + 4.0 * c4 * v.powi(3);
                }
                if lmax >= 2 {
                    d[2] = mu2 + 12.0 * c4 * v * v;
                }
                if lmax >= 3 {
                    d[3] = 24.0 * c4 * v;
                }
                if lmax >= 4 {
                    d[4] = 24.0 * c4;
                }
                d
            }
        }
    }
}

/// Method-of-moments estimates of `(E eps^2, E eps^4)` from repeated
/// measurement differences `D = eps - eps'`:
/// `mu2 = mean(D^2)/2` and `mu4 = (mean(D^4) - 6 mu2^2)/2`, the latter
/// clamped to the Cauchy–Schwarz floor `mu2^2`.
pub fn estimate_moments(diffs: &[f64]) -> ErrorMoments {
    let n = diffs.len().max(1) as f64;
    let m2: f64 = diffs.iter().map(|d| d * d).sum::<f64>() / n;
    let m4: f64 = diffs.iter().map(|d| d * d * d * d).sum::<f64>() / n;
    let mu2 = m2 / 2.0;
    let mu4 = ((m4 - 6.0 * mu2 * mu2) / 2.0).max(mu2 * mu2);
    ErrorMoments { mu2, mu4 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1};

    const LAM2: f64 = 1.0 / 24.0;
    const MU: f64 = 1.0 / 24.0;

    #[test]
    fn laplace_cf_and_reciprocal() {
        let m = ErrorModel::KnownLaplace { lambda2: LAM2 };
        for &t in &[0.0, 0.5, -2.0, 10.0] {
            assert_relative_eq!(m.cf_eval(t), 1.0 / (1.0 + LAM2 * t * t), epsilon = 1e-15);
            assert_relative_eq!(
                m.inv_cf_eval(t).unwrap() * m.cf_eval(t),
                1.0,
                epsilon = 1e-14
            );
        }
        assert_eq!(m.sigma2(), 2.0 * LAM2);
        let mom = m.known_moments().unwrap();
        assert_eq!(mom.mu2, 2.0 * LAM2);
        assert_eq!(mom.mu4, 24.0 * LAM2 * LAM2);
    }

    #[test]
    fn gaussian_cf_moments_and_overflow_guard() {
        let m = ErrorModel::KnownGaussian { mu: MU };
        assert_relative_eq!(m.cf_eval(1.5), (-MU * 2.25).exp(), epsilon = 1e-15);
        assert_eq!(m.sigma2(), 2.0 * MU);
        let mom = m.known_moments().unwrap();
        assert_eq!(mom.mu2, 2.0 * MU);
        // Gaussian kurtosis: E eps^4 = 3 (Var eps)^2 = 12 mu^2.
        assert_relative_eq!(mom.mu4, 3.0 * (2.0 * MU) * (2.0 * MU), epsilon = 1e-15);
        // mu t^2 > 700 must fail loudly rather than overflow.
        let err = m.inv_cf_eval(200.0).unwrap_err();
        match err {
            crate::Error::UnstableDeconvolution { t } => assert_eq!(t, 200.0),
            other => panic!("unexpected error: {other}"),
        }
        assert!(m.inv_cf_eval(100.0).is_ok());
    }

    #[test]
    fn estimated_cf_is_floored_and_exact_for_zero_error() {
        let zero = ErrorModel::estimated(vec![0.0; 50]);
        for &t in &[0.0, 1.0, 7.5] {
            assert_eq!(zero.cf_eval(t), 1.0);
            assert_eq!(zero.inv_cf_eval(t).unwrap(), 1.0);
        }
        // With wild diffs the estimate at large t collapses to the floor.
        let m = ErrorModel::estimated(vec![10.0, -3.0, 4.0, -11.0]);
        let floor = 0.5; // 4^(-1/2)
        assert!(m.cf_eval(50.0) >= floor);
        assert!(m.inv_cf_eval(50.0).unwrap() <= 1.0 / floor + 1e-12);
    }

    #[test]
    fn estimated_moments_match_formulas_and_clamp() {
        let diffs = vec![1.0, -2.0, 0.5, 1.5];
        let m2 = diffs.iter().map(|d| d * d).sum::<f64>() / 4.0;
        let m4 = diffs.iter().map(|d| d.powi(4)).sum::<f64>() / 4.0;
        let got = estimate_moments(&diffs);
        assert_relative_eq!(got.mu2, m2 / 2.0, epsilon = 1e-15);
        assert_relative_eq!(
            got.mu4,
            ((m4 - 6.0 * got.mu2 * got.mu2) / 2.0).max(got.mu2 * got.mu2),
            epsilon = 1e-15
        );
        // Near-constant |D| makes the raw mu4 estimate negative; the clamp
        // keeps it at the mu2^2 floor.
        let clamped = estimate_moments(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(clamped.mu4, clamped.mu2 * clamped.mu2);
    }

    #[test]
    fn estimated_cf_tracks_true_laplace_modulus() {
        // D = eps - eps' with Laplace eps: E cos(tD) = |cf(t)|^2 and the
        // floored modulus estimate converges to cf(t).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // A difference of Exp(scale beta) draws is Laplace with CF
        // 1/(1 + beta^2 t^2), so beta = sqrt(lambda2).
        let beta = LAM2.sqrt();
        let n = 200_000;
        let mut diffs = Vec::with_capacity(n);
        for _ in 0..n {
            let e1: f64 = Exp1.sample(&mut rng);
            let e2: f64 = Exp1.sample(&mut rng);
            let e3: f64 = Exp1.sample(&mut rng);
            let e4: f64 = Exp1.sample(&mut rng);
            let eps = beta * (e1 - e2);
            let eps_r = beta * (e3 - e4);
            diffs.push(eps - eps_r);
        }
        let truth = ErrorModel::KnownLaplace { lambda2: LAM2 };
        let est = ErrorModel::estimated(diffs);
        for &t in &[0.5, 1.0, 2.0, 3.0] {
            assert_relative_eq!(est.cf_eval(t), truth.cf_eval(t), max_relative = 2e-2);
        }
        assert_relative_eq!(est.sigma2(), 2.0 * LAM2, max_relative = 2e-2);
    }

    #[test]
    fn recip_cf_derivs_laplace_closed_form() {
        let m = ErrorModel::KnownLaplace { lambda2: LAM2 };
        let v = 1.3;
        let d = m.recip_cf_derivs(v, 6);
        assert_relative_eq!(d[0], 1.0 + LAM2 * v * v, epsilon = 1e-15);
        assert_relative_eq!(d[1], 2.0 * LAM2 * v, epsilon = 1e-15);
        assert_relative_eq!(d[2], 2.0 * LAM2, epsilon = 1e-15);
        assert_eq!(&d[3..], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn recip_cf_derivs_gaussian_matches_recurrence_values() {
        let m = ErrorModel::KnownGaussian { mu: MU };
        let v = 0.9;
        let e = (MU * v * v).exp();
        let d = m.recip_cf_derivs(v, 4);
        assert_relative_eq!(d[0], e, epsilon = 1e-15);
        assert_relative_eq!(d[1], 2.0 * MU * v * e, max_relative = 1e-14);
        assert_relative_eq!(
            d[2],
            (2.0 * MU + 4.0 * MU * MU * v * v) * e,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            d[3],
            (12.0 * MU * MU * v + 8.0 * MU.powi(3) * v.powi(3)) * e,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            d[4],
            (12.0 * MU * MU + 48.0 * MU.powi(3) * v * v + 16.0 * MU.powi(4) * v.powi(4)) * e,
            max_relative = 1e-14
        );
    }

    #[test]
    fn recip_cf_derivs_estimated_is_the_moment_quartic() {
        let diffs = vec![0.3, -0.2, 0.25, -0.35, 0.1, -0.15];
        let m = ErrorModel::estimated(diffs.clone());
        let ErrorMoments { mu2, mu4 } = estimate_moments(&diffs);
        let c4 = (6.0 * mu2 * mu2 - mu4) / 24.0;
        let v = 2.0;
        let d = m.recip_cf_derivs(v, 4);
        assert_relative_eq!(
            d[0],
            1.0 + 0.5 * mu2 * v * v + c4 * v.powi(4),
            max_relative = 1e-14
        );
        assert_relative_eq!(d[2], mu2 + 12.0 * c4 * v * v, max_relative = 1e-14);
        assert_relative_eq!(d[4], 24.0 * c4, max_relative = 1e-14);
    }
}
