//! Specification testing for polynomial regression when the covariate is
//! observed with additive measurement error.
//!
//! Only a contaminated surrogate `W = X + eps` of the true regressor `X` is
//! observed, together with the response `Y`. The library checks whether a
//! polynomial regression function fits `E[Y | X]` by
//!
//! 1. estimating the polynomial coefficients with adjusted least squares
//!    (bias-corrected monomials, [`eiv`]),
//! 2. forming a residual-marked empirical process in the frequency domain
//!    whose per-observation terms undo the error blur through deconvolution
//!    moment tables ([`kernel`], [`projection`]),
//! 3. projecting out the parameter-estimation effect so that critical values
//!    can come from a cheap multiplier bootstrap ([`engine`]), and
//! 4. aggregating the process into Kolmogorov–Smirnov and Cramér–von Mises
//!    statistics with seeded, reproducible Monte Carlo tooling ([`simulate`]).
//!
//! The error distribution may be known (Laplace or Gaussian) or estimated
//! from repeated measurements `W^r = X + eps'` ([`error_model`]).

pub mod eiv;
pub mod engine;
pub mod error_model;
pub mod flattop;
pub mod jet;
pub mod kernel;
pub mod projection;
pub mod simulate;

pub use eiv::{als_fit, corrected_monomial, AlsFit, ParametricModel};
pub use engine::{
    bootstrap_distribution, bootstrap_statistics, cvm_stat, draw_multipliers, ks_stat, run_test,
    Diagnostics, ErrorSpec, Multiplier, TestConfig, TestResult,
};
pub use error_model::{estimate_moments, ErrorModel, ErrorMoments};
pub use flattop::{bandwidth_rot, flattop_ft, SmoothnessCase};
pub use kernel::{DeconvKernelSpec, MomentPath, MomentTable};
pub use projection::{
    build_projection, projected_psi, raw_integral, s_pro, ProjectionComponents, PsiCache, XiGrid,
};
pub use simulate::{
    run_mc_cell, run_table, simulate_dgp, CellRates, Dgp, DgpSpec, McCellRecord, McReport,
    NoiseFamily, SimulatedData, TableOptions,
};

use thiserror::Error;

/// Errors surfaced by the numerical pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The reciprocal error characteristic function overflows the floating
    /// range at some required frequency (bandwidth too small for the model).
    #[error("deconvolution unstable: 1/f_eps^ft overflows at t = {t:.6e}")]
    UnstableDeconvolution { t: f64 },

    /// The u-space quadrature for a kernel moment failed its self-check:
    /// doubling the truncation range still moves the value materially.
    #[error(
        "kernel-moment quadrature not converged at order {order}, xi = {xi:.6}: \
         relative change {rel_change:.3e} after doubling u_trunc (tolerance 1e-4)"
    )]
    QuadratureNonConvergence {
        order: usize,
        xi: f64,
        rel_change: f64,
    },

    /// A corrected moment matrix could not be solved even after the recorded
    /// ridge fallback.
    #[error("singular design: corrected moment matrix unsolvable (condition ~ {cond:.3e})")]
    SingularDesign { cond: f64 },

    /// Inputs have inconsistent lengths, missing required columns, or
    /// non-finite entries.
    #[error("input shape mismatch: {0}")]
    InputShapeMismatch(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Derives an independent 64-bit stream seed from a master seed and a stream
/// index (splitmix64 finalizer). Used for per-replication and per-bootstrap
/// RNG streams so parallel execution is reproducible regardless of
/// scheduling.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Binomial coefficient as f64 (exact for the small orders used here).
pub(crate) fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Validates that a slice contains only finite values.
pub(crate) fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(pos) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::InputShapeMismatch(format!(
            "column '{name}' has a non-finite value at index {pos}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seed_is_deterministic_and_spreads() {
        assert_eq!(split_seed(42, 7), split_seed(42, 7));
        assert_ne!(split_seed(42, 7), split_seed(42, 8));
        assert_ne!(split_seed(42, 7), split_seed(43, 7));
        // Consecutive indices should not produce trivially related seeds.
        let a = split_seed(0, 1);
        let b = split_seed(0, 2);
        assert_ne!(a ^ b, 0);
        assert!((a ^ b).count_ones() > 8);
    }

    #[test]
    fn binom_matches_pascal_triangle() {
        assert_eq!(binom(0, 0), 1.0);
        assert_eq!(binom(4, 2), 6.0);
        assert_eq!(binom(6, 3), 20.0);
        assert_eq!(binom(5, 6), 0.0);
        for n in 0..10usize {
            for k in 0..=n {
                let pascal = if k == 0 || k == n {
                    1.0
                } else {
                    binom(n - 1, k - 1) + binom(n - 1, k)
                };
                assert_eq!(binom(n, k), pascal);
            }
        }
    }

    #[test]
    fn check_finite_reports_position() {
        assert!(check_finite("y", &[1.0, 2.0]).is_ok());
        let err = check_finite("y", &[1.0, f64::NAN]).unwrap_err();
        match err {
            Error::InputShapeMismatch(msg) => {
                assert!(msg.contains("index 1"));
                assert!(msg.contains('y'));
            }
            other => panic!("unexpected error: {other}"),
        }
    }
}
