//! Truncated Taylor-series ("jet") arithmetic.
//!
//! A jet of length `L` stores the Taylor coefficients `f(a), f'(a)/1!, ...,
//! f^(L-1)(a)/(L-1)!` of a function at an expansion point. Composing jets
//! propagates exact derivatives through products, reciprocals, and
//! exponentials, which is how the tapered-spectrum moment path obtains
//! high-order derivatives of the flat-top taper without finite-difference
//! noise.

/// Jet of the constant function `c`.
pub fn jconst(c: f64, len: usize) -> Vec<f64> {
    let mut a = vec![0.0; len];
    a[0] = c;
    a
}

/// Jet of the identity function evaluated at `x`.
pub fn jvar(x: f64, len: usize) -> Vec<f64> {
    let mut a = vec![0.0; len];
    a[0] = x;
    if len > 1 {
        a[1] = 1.0;
    }
    a
}

/// Cauchy product of two jets (same length).
pub fn jmul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mut s = 0.0;
        for j in 0..=k {
            s += a[j] * b[k - j];
        }
        out[k] = s;
    }
    out
}

/// Jet of `1 / a`; requires `a[0] != 0`.
pub fn jrecip(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    out[0] = 1.0 / a[0];
    for k in 1..n {
        let mut s = 0.0;
        for j in 1..=k {
            s += a[j] * out[k - j];
        }
        out[k] = -out[0] * s;
    }
    out
}

/// Jet of `exp(a)`.
pub fn jexp(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    out[0] = a[0].exp();
    for k in 1..n {
        let mut s = 0.0;
        for j in 1..=k {
            s += j as f64 * a[j] * out[k - j];
        }
        out[k] = s / k as f64;
    }
    out
}

/// Jet of `-a`.
pub fn jneg(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| -x).collect()
}

/// Jet of `s * a` for a scalar `s`.
pub fn jscale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| s * x).collect()
}

/// Jet of `a + b`.
pub fn jadd(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Flips a jet of `f(s)` into the jet of `f(-s)` at the mirrored point
/// (odd-order coefficients change sign). Used to extend even functions whose
/// jets are only constructed for nonnegative arguments.
pub fn jreflect(a: &[f64]) -> Vec<f64> {
    a.iter()
        .enumerate()
        .map(|(i, x)| if i % 2 == 1 { -x } else { *x })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_deriv(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn mul_matches_product_rule() {
        // f(s) = s^2, g(s) = exp(s) at s = 0.7; (fg)'' = 2g + 4sg' + s^2 g''.
        let s = 0.7;
        let x = jvar(s, 5);
        let f = jmul(&x, &x);
        let g = jexp(&x);
        let fg = jmul(&f, &g);
        let e = s.exp();
        assert_relative_eq!(fg[0], s * s * e, max_relative = 1e-14);
        assert_relative_eq!(fg[1], (2.0 * s + s * s) * e, max_relative = 1e-14);
        assert_relative_eq!(
            fg[2],
            (2.0 + 4.0 * s + s * s) * e / 2.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn recip_matches_closed_form() {
        // 1/(1 + s^2) at s = 0.5: value 0.8, derivative -2s/(1+s^2)^2 = -0.64.
        let s = 0.5;
        let x = jvar(s, 6);
        let mut denom = jmul(&x, &x);
        denom[0] += 1.0;
        let r = jrecip(&denom);
        assert_relative_eq!(r[0], 0.8, max_relative = 1e-14);
        assert_relative_eq!(r[1], -0.64, max_relative = 1e-14);
        // Cross-check order 3 against a central difference of the order-2
        // coefficient's underlying derivative.
        let f = |t: f64| 1.0 / (1.0 + t * t);
        let d3 = fd_deriv(
            |t| {
                let h = 1e-4;
                (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h)
            },
            s,
            1e-4,
        );
        assert_relative_eq!(r[3] * 6.0, d3, max_relative = 1e-4);
    }

    #[test]
    fn exp_jet_reproduces_scaled_exponential() {
        // exp(c s^2): derivative coefficients grow as the Hermite-like
        // recurrence; check against the hand expansion at s = 0.3, c = 2.
        let (s, c) = (0.3, 2.0);
        let x = jvar(s, 4);
        let arg = jscale(&jmul(&x, &x), c);
        let e = jexp(&arg);
        let v = (c * s * s).exp();
        assert_relative_eq!(e[0], v, max_relative = 1e-14);
        assert_relative_eq!(e[1], 2.0 * c * s * v, max_relative = 1e-14);
        assert_relative_eq!(
            e[2],
            (2.0 * c + 4.0 * c * c * s * s) * v / 2.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn reflect_flips_odd_orders() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(jreflect(&a), vec![1.0, -2.0, 3.0, -4.0]);
    }
}
