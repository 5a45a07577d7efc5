//! The projected empirical residual process.
//!
//! For each frequency `xi` the raw residual integral
//!
//! ```text
//! R_i(xi) = integral (Y_i - g(x; theta)) e^{i x xi} K_b(x - W_i) dx
//!         = e^{i W_i xi} [ Y_i m_0(xi) - sum_l a_l(W_i) b^l m_l(xi) ]
//! ```
//!
//! measures how much observation `i` deviates from the fitted regression
//! at that frequency, already deconvolved against the measurement error.
//! Because `theta` is estimated from the same data, the empirical mean of
//! `R_i` has a drift component along the score of the coefficient fit;
//! projecting it out yields per-observation contributions
//!
//! ```text
//! psi_i(xi) = R_i(xi) - q_i' Delta_n^{-1} G_n(xi)
//! ```
//!
//! whose multiplier-bootstrap law is pivotal under the null. `G_n` is the
//! deconvolved moment vector of the monomial basis, `Delta_n` the corrected
//! design matrix, and `q_i` the estimating-equation residual of the fit.
//! All three reduce to polynomial combinations of the kernel moment table.

use crate::eiv::{AlsFit, ParametricModel};
use crate::kernel::{DeconvKernelSpec, MomentTable};
use crate::{binom, check_finite, Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::eiv::{RIDGE_COND_THRESHOLD, RIDGE_SCALE};

/// A symmetric midpoint grid of test frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct XiGrid {
    /// Lower endpoint of the frequency window.
    pub lo: f64,
    /// Upper endpoint of the frequency window.
    pub hi: f64,
    /// Number of midpoint nodes (odd, at least 3).
    pub n_xi: usize,
}

impl XiGrid {
    /// Builds a grid after validating the window and node count.
    pub fn new(lo: f64, hi: f64, n_xi: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InputShapeMismatch(format!(
                "frequency window must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        if n_xi < 3 || n_xi % 2 == 0 {
            return Err(Error::InputShapeMismatch(format!(
                "n_xi must be an odd integer >= 3, got {n_xi}"
            )));
        }
        Ok(XiGrid { lo, hi, n_xi })
    }

    /// Node spacing.
    pub fn delta(&self) -> f64 {
        (self.hi - self.lo) / self.n_xi as f64
    }

    /// Midpoint nodes `lo + (j + 1/2) delta`.
    pub fn nodes(&self) -> Vec<f64> {
        let d = self.delta();
        (0..self.n_xi)
            .map(|j| self.lo + (j as f64 + 0.5) * d)
            .collect()
    }
}

impl Default for XiGrid {
    /// The window `[-3, 3]` with 31 nodes.
    fn default() -> Self {
        XiGrid {
            lo: -3.0,
            hi: 3.0,
            n_xi: 31,
        }
    }
}

/// Deconvolved design quantities shared by every observation:
/// the moment vector `G_n(xi)`, the corrected design matrix `Delta_n`,
/// and the solved projection coefficients `Delta_n^{-1} G_n(xi)`.
#[derive(Debug, Clone)]
pub struct ProjectionComponents {
    /// `G_n[k][j] = (1/n) sum_i e^{i W_i xi_j} sum_{l<=k} C(k,l) W_i^{k-l} b^l m_l(xi_j)`.
    pub g: Vec<Vec<Complex64>>,
    /// `Delta_n[j][k] = (1/n) sum_i sum_{l<=j+k} C(j+k,l) W_i^{j+k-l} Re(b^l m_l(0))`.
    pub delta: DMatrix<f64>,
    /// Solved coefficients `beta[k][j]`, the `k`-th component of
    /// `Delta_n^{-1} G_n(xi_j)`.
    pub beta: Vec<Vec<Complex64>>,
    /// Whether the solve needed the stabilising ridge.
    pub ridge_applied: bool,
}

impl ProjectionComponents {
    /// Polynomial dimension `d + 1` of the projection.
    pub fn dim(&self) -> usize {
        self.delta.nrows()
    }

    /// Solves `Delta_n x = rhs` with the same matrix (and ridge) used for
    /// the stored coefficients.
    pub fn delta_solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::InputShapeMismatch(format!(
                "rhs length {} does not match projection dimension {}",
                rhs.len(),
                self.dim()
            )));
        }
        let m = solve_matrix(&self.delta, self.ridge_applied);
        let sol = m
            .lu()
            .solve(&DVector::from_column_slice(rhs))
            .ok_or(Error::SingularDesign { cond: f64::INFINITY })?;
        Ok(sol.iter().copied().collect())
    }
}

/// Per-observation projected residual process on the frequency grid,
/// cached for reuse across bootstrap replicates.
#[derive(Debug, Clone)]
pub struct PsiCache {
    /// `psi_pro[i][j] = psi_i(xi_j)`.
    pub psi_pro: Vec<Vec<Complex64>>,
    /// Coefficients the residuals were computed at.
    pub theta_used: Vec<f64>,
    /// Kernel configuration the moment table came from.
    pub spec_used: DeconvKernelSpec,
}

impl PsiCache {
    /// Sample size.
    pub fn n(&self) -> usize {
        self.psi_pro.len()
    }

    /// Number of frequency nodes.
    pub fn n_xi(&self) -> usize {
        self.psi_pro.first().map_or(0, Vec::len)
    }
}

/// `b^l m_l(xi_j)` rows for `l = 0..=lmax`, plus the real zero-frequency
/// column; the combination every pipeline formula consumes.
fn scaled_rows(table: &MomentTable, lmax: usize) -> (Vec<Vec<Complex64>>, Vec<f64>) {
    let n_xi = table.xi().len();
    let mut rows = Vec::with_capacity(lmax + 1);
    for l in 0..=lmax {
        rows.push((0..n_xi).map(|j| table.scaled(l, j)).collect());
    }
    let zero = (0..=lmax).map(|l| table.scaled_zero(l)).collect();
    (rows, zero)
}

fn powers(w: f64, max: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(max + 1);
    let mut acc = 1.0;
    for _ in 0..=max {
        p.push(acc);
        acc *= w;
    }
    p
}

/// The raw deconvolved residual integrals `R_i(xi_j)`, one row per
/// observation.
///
/// Requires the table to tabulate orders strictly above the polynomial
/// degree.
pub fn raw_integral(
    y: &[f64],
    w: &[f64],
    model: &ParametricModel,
    table: &MomentTable,
) -> Result<Vec<Vec<Complex64>>> {
    if y.len() != w.len() || y.is_empty() {
        return Err(Error::InputShapeMismatch(format!(
            "y and w must be non-empty with equal length, got {} and {}",
            y.len(),
            w.len()
        )));
    }
    if model.degree + 1 > table.max_order() {
        return Err(Error::InputShapeMismatch(format!(
            "moment table of order {} cannot integrate a degree-{} model",
            table.max_order(),
            model.degree
        )));
    }
    check_finite("y", y)?;
    check_finite("w", w)?;
    let (sm, _) = scaled_rows(table, model.degree);
    let xi = table.xi();
    let mut out = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        let a = model.shift_coefs(wi);
        let mut row = Vec::with_capacity(xi.len());
        for (j, &x) in xi.iter().enumerate() {
            let mut acc = sm[0][j] * yi;
            for (l, &al) in a.iter().enumerate() {
                acc -= sm[l][j] * al;
            }
            row.push(Complex64::from_polar(1.0, wi * x) * acc);
        }
        out.push(row);
    }
    Ok(out)
}

fn solve_matrix(delta: &DMatrix<f64>, ridge: bool) -> DMatrix<f64> {
    let mut m = delta.clone();
    if ridge {
        let bump = RIDGE_SCALE * m.trace() / m.nrows() as f64;
        for j in 0..m.nrows() {
            m[(j, j)] += bump;
        }
    }
    m
}

/// Assembles the deconvolved design quantities for a degree-`degree`
/// projection. The moment table must tabulate orders up to `2 * degree`.
pub fn build_projection(
    w: &[f64],
    degree: usize,
    table: &MomentTable,
) -> Result<ProjectionComponents> {
    if w.is_empty() {
        return Err(Error::InputShapeMismatch(
            "w must be non-empty".to_string(),
        ));
    }
    if degree == 0 || 2 * degree > table.max_order() {
        return Err(Error::InputShapeMismatch(format!(
            "projection degree {degree} needs table orders up to {}, table has {}",
            2 * degree,
            table.max_order()
        )));
    }
    check_finite("w", w)?;
    let n = w.len();
    let p = degree + 1;
    let inv_n = 1.0 / n as f64;
    let (sm, smz) = scaled_rows(table, 2 * degree);
    let xi = table.xi();
    let n_xi = xi.len();

    // G_n: per-frequency deconvolved moments of the monomial basis.
    let mut g = vec![vec![Complex64::new(0.0, 0.0); n_xi]; p];
    for &wi in w {
        let wp = powers(wi, degree);
        for (j, &x) in xi.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, wi * x);
            for (k, g_k) in g.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..=k {
                    acc += sm[l][j] * (binom(k, l) * wp[k - l]);
                }
                g_k[j] += phase * acc;
            }
        }
    }
    for row in g.iter_mut() {
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }

    // Delta_n: corrected design matrix from zero-frequency moments.
    let mut order_means = vec![0.0f64; 2 * degree + 1];
    for &wi in w {
        let wp = powers(wi, 2 * degree);
        for (order, slot) in order_means.iter_mut().enumerate() {
            let mut acc = 0.0;
            for l in 0..=order {
                acc += binom(order, l) * wp[order - l] * smz[l];
            }
            *slot += acc;
        }
    }
    for v in order_means.iter_mut() {
        *v *= inv_n;
    }
    let delta = DMatrix::from_fn(p, p, |j, k| order_means[j + k]);

    // Condition check mirrors the coefficient fit's ridge policy.
    let sv = delta.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let ridge_applied = !cond.is_finite() || cond > RIDGE_COND_THRESHOLD;

    let lu = solve_matrix(&delta, ridge_applied).lu();
    let mut beta = vec![vec![Complex64::new(0.0, 0.0); n_xi]; p];
    for j in 0..n_xi {
        let re = DVector::from_fn(p, |k, _| g[k][j].re);
        let im = DVector::from_fn(p, |k, _| g[k][j].im);
        let re_sol = lu.solve(&re).ok_or(Error::SingularDesign { cond })?;
        let im_sol = lu.solve(&im).ok_or(Error::SingularDesign { cond })?;
        for k in 0..p {
            beta[k][j] = Complex64::new(re_sol[k], im_sol[k]);
        }
    }

    Ok(ProjectionComponents {
        g,
        delta,
        beta,
        ridge_applied,
    })
}

/// The estimating-equation residual vector `q_i` of the coefficient fit:
/// `q_i[k]` is observation `i`'s contribution to the `k`-th corrected
/// normal equation, expressed through zero-frequency kernel moments.
fn score_residual(yi: f64, wi: f64, model: &ParametricModel, smz: &[f64], p: usize) -> Vec<f64> {
    let d = model.degree;
    let a = model.shift_coefs(wi);
    let wp = powers(wi, p - 1 + d);
    let mut q = vec![0.0; p];
    for (k, slot) in q.iter_mut().enumerate() {
        let mut data_part = 0.0;
        for l in 0..=k {
            data_part += binom(k, l) * wp[k - l] * smz[l];
        }
        let mut fit_part = 0.0;
        for (l, &sml) in smz.iter().enumerate().take(k + d + 1) {
            // Coefficient of x^l in g(w + x) * (w + x)^k.
            let mut pl = 0.0;
            for (l1, &al1) in a.iter().enumerate().take(l + 1) {
                let l2 = l - l1;
                if l2 <= k {
                    pl += al1 * binom(k, l2) * wp[k - l2];
                }
            }
            fit_part += pl * sml;
        }
        *slot = yi * data_part - fit_part;
    }
    q
}

/// Projects the raw residual process observation by observation:
/// `psi_i(xi) = R_i(xi) - q_i' Delta_n^{-1} G_n(xi)`.
pub fn projected_psi(
    y: &[f64],
    w: &[f64],
    fit: &AlsFit,
    comps: &ProjectionComponents,
    table: &MomentTable,
    spec: &DeconvKernelSpec,
) -> Result<PsiCache> {
    let model = ParametricModel::new(fit.theta_hat.clone())?;
    let p = comps.dim();
    if model.degree + 1 != p {
        return Err(Error::InputShapeMismatch(format!(
            "fit degree {} does not match projection dimension {}",
            model.degree,
            p - 1
        )));
    }
    if model.degree + p - 1 > table.max_order() {
        return Err(Error::InputShapeMismatch(format!(
            "moment table of order {} too short for the projected residuals",
            table.max_order()
        )));
    }
    let raw = raw_integral(y, w, &model, table)?;
    let (_, smz) = scaled_rows(table, model.degree + p - 1);
    let n_xi = table.xi().len();

    let mut psi_pro = Vec::with_capacity(y.len());
    for (i, (&yi, &wi)) in y.iter().zip(w).enumerate() {
        let q = score_residual(yi, wi, &model, &smz, p);
        let mut row = Vec::with_capacity(n_xi);
        for (j, &raw_ij) in raw[i].iter().enumerate() {
            let mut proj = Complex64::new(0.0, 0.0);
            for (k, &qk) in q.iter().enumerate() {
                proj += comps.beta[k][j] * qk;
            }
            row.push(raw_ij - proj);
        }
        psi_pro.push(row);
    }
    Ok(PsiCache {
        psi_pro,
        theta_used: fit.theta_hat.clone(),
        spec_used: spec.clone(),
    })
}

/// The observed process `S_n(xi_j)`: the per-frequency mean of the
/// projected residuals.
pub fn s_pro(psi: &PsiCache) -> Vec<Complex64> {
    let n = psi.n();
    let n_xi = psi.n_xi();
    let inv_n = 1.0 / n as f64;
    let mut s = vec![Complex64::new(0.0, 0.0); n_xi];
    for row in &psi.psi_pro {
        for (j, v) in row.iter().enumerate() {
            s[j] += v;
        }
    }
    for v in s.iter_mut() {
        *v *= inv_n;
    }
    s
}
