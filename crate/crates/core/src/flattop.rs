//! The infinite-order flat-top taper and the rule-of-thumb bandwidth.
//!
//! The taper's Fourier transform `K^ft` equals 1 on `|t| <= 0.05`, vanishes
//! for `|t| >= 1`, and bridges the two regions with a C-infinity bump, so
//! convolving with the taper adds no bias to polynomial moments (every
//! derivative of `K^ft` vanishes at 0).

use crate::jet::{jconst, jexp, jmul, jneg, jrecip, jreflect, jvar};
use serde::{Deserialize, Serialize};

/// Inner edge of the taper's transition band (flat region is `|t| <= LO`).
const FLAT_EDGE: f64 = 0.05;

/// Fourier transform of the flat-top taper:
/// 1 on `|t| <= 0.05`, 0 on `|t| >= 1`, and
/// `exp(-exp(-(|t|-0.05)^-2) / (|t|-1)^2)` in between.
pub fn flattop_ft(t: f64) -> f64 {
    let a = t.abs();
    if a <= FLAT_EDGE {
        1.0
    } else if a >= 1.0 {
        0.0
    } else {
        let inner = (-((a - FLAT_EDGE).powi(-2))).exp();
        (-inner / ((a - 1.0) * (a - 1.0))).exp()
    }
}

/// Taylor jet of `K^ft` at `s` with `len` coefficients (orders
/// `0..len-1`), exact up to floating rounding. The flat and vanishing
/// regions return constant jets; inside the transition band the jet is
/// propagated through the closed-form composition.
pub fn flattop_ft_jet(s: f64, len: usize) -> Vec<f64> {
    let a = s.abs();
    if a <= FLAT_EDGE {
        return jconst(1.0, len);
    }
    if a >= 1.0 {
        return jconst(0.0, len);
    }
    let x = jvar(a, len);
    let mut v = x.clone();
    v[0] -= FLAT_EDGE; // a - 0.05
    let mut w = x;
    w[0] -= 1.0; // a - 1
    let p = jrecip(&jmul(&v, &v)); // (a - 0.05)^-2
    let q = jexp(&jneg(&p)); // exp(-(a - 0.05)^-2)
    let r = jrecip(&jmul(&w, &w)); // (a - 1)^-2
    let g = jmul(&q, &r);
    let jet = jexp(&jneg(&g));
    if s < 0.0 {
        // K^ft is even, so the jet at -a is the reflected jet at a.
        jreflect(&jet)
    } else {
        jet
    }
}

/// `order`-th derivative of `K^ft` at `t` by central finite differences with
/// one Richardson extrapolation step. Kept as an independent, slowly
/// converging cross-check of the jet path (accuracy only ~1e-3 relative for
/// higher orders in the transition band).
pub fn flattop_ft_deriv_fd(t: f64, order: usize, fd_step: f64) -> f64 {
    let stencil = |h: f64| -> f64 {
        // Central binomial stencil for the order-th derivative, O(h^2).
        let mut acc = 0.0;
        for j in 0..=order {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let coeff = crate::binom(order, j);
            acc += sign * coeff * flattop_ft(t + (order as f64 / 2.0 - j as f64) * h);
        }
        acc / h.powi(order as i32)
    };
    let d1 = stencil(fd_step);
    let d2 = stencil(fd_step / 2.0);
    (4.0 * d2 - d1) / 3.0
}

/// Smoothness regime of the error distribution, which selects the bandwidth
/// rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothnessCase {
    /// Polynomially decaying error CF (e.g. Laplace).
    Ordinary,
    /// Exponentially decaying error CF (e.g. Gaussian); serialized as
    /// "super".
    #[serde(rename = "super")]
    Supersmooth,
}

impl std::fmt::Display for SmoothnessCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SmoothnessCase::Ordinary => write!(f, "ordinary"),
            SmoothnessCase::Supersmooth => write!(f, "super"),
        }
    }
}

/// Rule-of-thumb bandwidth, linear in the tuning constant `c`:
/// `c * (5 sigma2^2 / n)^(1/27)` in the ordinary-smooth case and
/// `c * (4 sigma2 / ln n)^(1/2)` in the supersmooth case.
pub fn bandwidth_rot(case: SmoothnessCase, sigma2: f64, n: usize, c: f64) -> f64 {
    let n = n as f64;
    match case {
        SmoothnessCase::Ordinary => c * (5.0 * sigma2 * sigma2 / n).powf(1.0 / 27.0),
        SmoothnessCase::Supersmooth => c * (4.0 * sigma2 / n.ln()).sqrt(),
    }
}
