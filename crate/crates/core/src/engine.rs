//! Test statistics, multiplier bootstrap, and the end-to-end testing
//! pipeline.
//!
//! The observed process `S_n` is summarised by a Kolmogorov–Smirnov type
//! supremum statistic and a Cramér–von Mises type integral statistic.
//! Critical values come from a multiplier bootstrap: the projected
//! per-observation residuals are reweighted by i.i.d. mean-zero,
//! unit-variance multipliers, which reproduces the null limiting law
//! conditionally on the data without re-estimating anything inside the
//! bootstrap loop.

use crate::eiv::als_fit;
use crate::error_model::ErrorModel;
use crate::flattop::{bandwidth_rot, SmoothnessCase};
use crate::kernel::DeconvKernelSpec;
use crate::projection::{build_projection, projected_psi, s_pro, PsiCache, XiGrid};
use crate::{check_finite, split_seed, Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Distribution of the bootstrap multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplier {
    /// Two-point distribution with mean 0, variance 1 and third moment 1.
    #[default]
    Mammen,
    /// Symmetric signs: mean 0, variance 1, third moment 0.
    Rademacher,
}

/// Measurement-error specification for a test run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "family")]
pub enum ErrorSpec {
    /// Known Laplace-type error with characteristic function
    /// `1 / (1 + lambda2 t^2)`.
    Laplace {
        /// Scale parameter (half the error variance).
        lambda2: f64,
    },
    /// Known Gaussian error with characteristic function `exp(-mu t^2)`.
    Gaussian {
        /// Scale parameter (half the error variance).
        mu: f64,
    },
    /// Unknown error distribution, estimated from repeated measurements.
    Estimated,
}

/// Full configuration of a specification test run.
#[derive(Debug, Clone)]
pub struct TestConfig {
    /// Smoothness regime driving the rule-of-thumb bandwidth.
    pub case: SmoothnessCase,
    /// Error model (known parametric or estimated from repeats).
    pub error: ErrorSpec,
    /// Bandwidth constant multiplying the rule-of-thumb rate.
    pub c: f64,
    /// Number of bootstrap replicates.
    pub n_boot: usize,
    /// Nominal levels the decision is reported at.
    pub alphas: Vec<f64>,
    /// Multiplier distribution for the bootstrap.
    pub multiplier: Multiplier,
    /// Master seed for the bootstrap streams.
    pub seed: u64,
    /// Frequency grid the process is evaluated on.
    pub xi: XiGrid,
    /// Degree of the polynomial null model.
    pub fit_degree: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            case: SmoothnessCase::Ordinary,
            error: ErrorSpec::Laplace { lambda2: 1.0 / 24.0 },
            c: 1.0,
            n_boot: 199,
            alphas: vec![0.01, 0.05, 0.10],
            multiplier: Multiplier::default(),
            seed: 0,
            xi: XiGrid::default(),
            fit_degree: 1,
        }
    }
}

/// Auxiliary quantities recorded alongside the decisions.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// Sample size used.
    pub n: usize,
    /// Bandwidth the kernel was built with.
    pub bandwidth: f64,
    /// Error variance fed into the bandwidth rule.
    pub sigma2: f64,
    /// Error moments used by the corrected monomials.
    pub error_mu2: f64,
    /// Fourth error moment used by the corrected monomials.
    pub error_mu4: f64,
    /// Fitted null-model coefficients.
    pub theta_hat: Vec<f64>,
    /// Condition number of the coefficient-fit moment matrix.
    pub fit_cond: f64,
    /// Whether the coefficient fit needed a ridge.
    pub fit_ridge: bool,
    /// Whether the projection solve needed a ridge.
    pub projection_ridge: bool,
}

/// Outcome of a specification test run.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    /// Observed supremum statistic `sqrt(n) max_j |S_n(xi_j)|`.
    pub ks: f64,
    /// Observed integral statistic `n sum_j |S_n(xi_j)|^2 delta_xi`.
    pub cvm: f64,
    /// Bootstrap replicates of the supremum statistic (replicate order).
    pub boot_ks: Vec<f64>,
    /// Bootstrap replicates of the integral statistic (replicate order).
    pub boot_cvm: Vec<f64>,
    /// Levels the critical values and decisions refer to.
    pub alphas: Vec<f64>,
    /// Bootstrap critical values of the supremum statistic, one per level.
    pub crit_ks: Vec<f64>,
    /// Bootstrap critical values of the integral statistic, one per level.
    pub crit_cvm: Vec<f64>,
    /// Bootstrap p-value of the supremum statistic.
    pub pval_ks: f64,
    /// Bootstrap p-value of the integral statistic.
    pub pval_cvm: f64,
    /// Rejection decisions (strict exceedance), one per level.
    pub reject_ks: Vec<bool>,
    /// Rejection decisions for the integral statistic, one per level.
    pub reject_cvm: Vec<bool>,
    /// Recorded fit and kernel diagnostics.
    pub diagnostics: Diagnostics,
}

/// Supremum statistic `sqrt(n) max_j |S(xi_j)|`.
pub fn ks_stat(s: &[Complex64], n: usize) -> f64 {
    let m = s.iter().fold(0.0f64, |acc, v| acc.max(v.norm()));
    (n as f64).sqrt() * m
}

/// Integral statistic `n sum_j |S(xi_j)|^2 delta_xi` (midpoint rule).
pub fn cvm_stat(s: &[Complex64], n: usize, delta_xi: f64) -> f64 {
    let sum: f64 = s.iter().map(|v| v.norm_sqr()).sum();
    n as f64 * sum * delta_xi
}

/// Draws `n` independent bootstrap multipliers.
pub fn draw_multipliers<R: Rng + ?Sized>(rng: &mut R, n: usize, kind: Multiplier) -> Vec<f64> {
    match kind {
        Multiplier::Mammen => {
            let root5 = 5.0f64.sqrt();
            let lo = -(root5 - 1.0) / 2.0;
            let hi = (root5 + 1.0) / 2.0;
            let p_lo = (root5 + 1.0) / (2.0 * root5);
            (0..n)
                .map(|_| {
                    if rng.random::<f64>() < p_lo {
                        lo
                    } else {
                        hi
                    }
                })
                .collect()
        }
        Multiplier::Rademacher => (0..n)
            .map(|_| if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 })
            .collect(),
    }
}

/// Statistics of one multiplier replicate: the process
/// `S*(xi_j) = (1/n) sum_i v_i psi_i(xi_j)` summarised exactly like the
/// observed one. With unit multipliers this reproduces the observed
/// statistics bit for bit.
pub fn bootstrap_statistics(psi: &[Vec<Complex64>], v: &[f64], delta_xi: f64) -> (f64, f64) {
    let n = psi.len();
    let n_xi = psi.first().map_or(0, Vec::len);
    let inv_n = 1.0 / n as f64;
    let mut s = vec![Complex64::new(0.0, 0.0); n_xi];
    for (row, &vi) in psi.iter().zip(v) {
        for (j, val) in row.iter().enumerate() {
            s[j] += val * vi;
        }
    }
    for val in s.iter_mut() {
        *val *= inv_n;
    }
    (ks_stat(&s, n), cvm_stat(&s, n, delta_xi))
}

/// Generates the bootstrap distributions of both statistics. Replicate
/// `b` (1-based) uses an independent stream derived from `seed`, so the
/// distribution is reproducible and independent of evaluation order.
pub fn bootstrap_distribution(
    psi: &PsiCache,
    delta_xi: f64,
    n_boot: usize,
    kind: Multiplier,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let n = psi.n();
    let mut boot_ks = Vec::with_capacity(n_boot);
    let mut boot_cvm = Vec::with_capacity(n_boot);
    for b in 1..=n_boot {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, b as u64));
        let v = draw_multipliers(&mut rng, n, kind);
        let (ks, cvm) = bootstrap_statistics(&psi.psi_pro, &v, delta_xi);
        boot_ks.push(ks);
        boot_cvm.push(cvm);
    }
    (boot_ks, boot_cvm)
}

/// The `ceil(B (1 - alpha))`-th smallest replicate.
fn critical_value(sorted: &[f64], alpha: f64) -> f64 {
    let b = sorted.len();
    let rank = (b as f64 * (1.0 - alpha)).ceil() as usize;
    sorted[rank.clamp(1, b) - 1]
}

/// Finite-sample bootstrap p-value `(1 + #{T*_b >= T}) / (B + 1)`.
fn p_value(boot: &[f64], obs: f64) -> f64 {
    let count = boot.iter().filter(|&&v| v >= obs).count();
    (1 + count) as f64 / (boot.len() + 1) as f64
}

fn validate_config(config: &TestConfig) -> Result<()> {
    if !(config.c.is_finite() && config.c > 0.0) {
        return Err(Error::InputShapeMismatch(format!(
            "bandwidth constant must be positive, got {}",
            config.c
        )));
    }
    if config.n_boot == 0 {
        return Err(Error::InputShapeMismatch(
            "need at least one bootstrap replicate".to_string(),
        ));
    }
    if config.alphas.is_empty() || config.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::InputShapeMismatch(format!(
            "levels must lie strictly inside (0, 1), got {:?}",
            config.alphas
        )));
    }
    XiGrid::new(config.xi.lo, config.xi.hi, config.xi.n_xi)?;
    Ok(())
}

/// Runs the full specification test: error model, rule-of-thumb
/// bandwidth, corrected-moment coefficient fit, kernel moment table,
/// projected residual process, observed statistics, multiplier bootstrap,
/// critical values and decisions.
///
/// `w_rep` carries the repeated measurement of `w` and is required exactly
/// when the error model is [`ErrorSpec::Estimated`].
pub fn run_test(
    y: &[f64],
    w: &[f64],
    w_rep: Option<&[f64]>,
    config: &TestConfig,
) -> Result<TestResult> {
    validate_config(config)?;
    if y.len() != w.len() || y.is_empty() {
        return Err(Error::InputShapeMismatch(format!(
            "y and w must be non-empty with equal length, got {} and {}",
            y.len(),
            w.len()
        )));
    }
    check_finite("y", y)?;
    check_finite("w", w)?;
    let n = y.len();

    let model = match (&config.error, w_rep) {
        (ErrorSpec::Laplace { lambda2 }, None) => {
            if !(lambda2.is_finite() && *lambda2 >= 0.0) {
                return Err(Error::InputShapeMismatch(format!(
                    "lambda2 must be non-negative, got {lambda2}"
                )));
            }
            ErrorModel::KnownLaplace { lambda2: *lambda2 }
        }
        (ErrorSpec::Gaussian { mu }, None) => {
            if !(mu.is_finite() && *mu >= 0.0) {
                return Err(Error::InputShapeMismatch(format!(
                    "mu must be non-negative, got {mu}"
                )));
            }
            ErrorModel::KnownGaussian { mu: *mu }
        }
        (ErrorSpec::Estimated, Some(rep)) => {
            if rep.len() != w.len() {
                return Err(Error::InputShapeMismatch(format!(
                    "w_rep length {} does not match w length {}",
                    rep.len(),
                    w.len()
                )));
            }
            check_finite("w_rep", rep)?;
            let diffs: Vec<f64> = w.iter().zip(rep).map(|(a, b)| a - b).collect();
            ErrorModel::estimated(diffs)
        }
        (ErrorSpec::Estimated, None) => {
            return Err(Error::InputShapeMismatch(
                "estimated error model requires repeated measurements (w_rep)".to_string(),
            ));
        }
        (_, Some(_)) => {
            return Err(Error::InputShapeMismatch(
                "repeated measurements supplied but the error model is known; \
                 drop w_rep or select the estimated model"
                    .to_string(),
            ));
        }
    };

    let sigma2 = model.sigma2();
    let bandwidth = bandwidth_rot(config.case, sigma2, n, config.c);
    let moments = model.moments();
    let fit = als_fit(y, w, config.fit_degree, &moments)?;

    let spec = DeconvKernelSpec::new(bandwidth, model)?;
    let nodes = config.xi.nodes();
    let table = spec.moment_table(&nodes)?;
    let comps = build_projection(w, config.fit_degree, &table)?;
    let psi = projected_psi(y, w, &fit, &comps, &table, &spec)?;

    let s = s_pro(&psi);
    let delta_xi = config.xi.delta();
    let ks = ks_stat(&s, n);
    let cvm = cvm_stat(&s, n, delta_xi);

    let (boot_ks, boot_cvm) = bootstrap_distribution(
        &psi,
        delta_xi,
        config.n_boot,
        config.multiplier,
        config.seed,
    );

    let mut sorted_ks = boot_ks.clone();
    sorted_ks.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
    let mut sorted_cvm = boot_cvm.clone();
    sorted_cvm.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));

    let crit_ks: Vec<f64> = config
        .alphas
        .iter()
        .map(|&a| critical_value(&sorted_ks, a))
        .collect();
    let crit_cvm: Vec<f64> = config
        .alphas
        .iter()
        .map(|&a| critical_value(&sorted_cvm, a))
        .collect();
    let reject_ks: Vec<bool> = crit_ks.iter().map(|&c| ks > c).collect();
    let reject_cvm: Vec<bool> = crit_cvm.iter().map(|&c| cvm > c).collect();

    Ok(TestResult {
        ks,
        cvm,
        pval_ks: p_value(&boot_ks, ks),
        pval_cvm: p_value(&boot_cvm, cvm),
        boot_ks,
        boot_cvm,
        alphas: config.alphas.clone(),
        crit_ks,
        crit_cvm,
        reject_ks,
        reject_cvm,
        diagnostics: Diagnostics {
            n,
            bandwidth,
            sigma2,
            error_mu2: moments.mu2,
            error_mu4: moments.mu4,
            theta_hat: fit.theta_hat,
            fit_cond: fit.cond,
            fit_ridge: fit.ridge_applied,
            projection_ridge: comps.ridge_applied,
        },
    })
}
