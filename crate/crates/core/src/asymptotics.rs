//! Plug-in estimates of the limiting covariances of the classical and two-stage
//! estimators.
//!
//! Notation: `V = E[g'^2 X X' / v]`, `J = J(theta)`, `Vt = J'VJ`,
//! `Q1 = E[eps^2 g'^2 J'(X/v - l)(X/v - l)'J]` with `l(z) = E(X/v | gamma'X = z)`,
//! `A = [gamma | J]` and `V2 = A'VA`. Averages run over the rows kept by the
//! fit's trimming mask.
//!
//! In population form `Q1 = Vt - C` where `C = avg g'^2 v J' l l' J`, so
//! `Vt - Q1` is positive semidefinite by construction. The sandwich form uses
//! squared leave-one-out residuals in place of `v`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::{self, CONDITION_LIMIT};
use crate::model::{Dataset, FitResult, GlmSpec};
use crate::reparam::{assemble_a, jacobian};
use crate::smoother::LocalLinear;

/// Slack allowed in the inequality checks.
pub const COMPARISON_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Q1Mode {
    /// Conditional variances in place of squared errors.
    #[default]
    PopulationForm,
    /// Squared leave-one-out residuals.
    Sandwich,
}

/// `avg_U g'(beta'x)^2 x x' / v` over the rows with `mask[i]` (all rows when `None`).
///
/// Fails with [`Error::SingularV`] when the condition number exceeds `1e12`.
pub fn estimate_v(
    dataset: &Dataset,
    spec: &GlmSpec,
    beta: &DVector<f64>,
    mask: Option<&[bool]>,
) -> Result<DMatrix<f64>> {
    let v_hat = information(dataset, spec, beta, mask)?;
    let condition = linalg::condition_number(&v_hat);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularV { condition });
    }
    Ok(v_hat)
}

/// `V_hat` without the conditioning check.
fn information(
    dataset: &Dataset,
    spec: &GlmSpec,
    beta: &DVector<f64>,
    mask: Option<&[bool]>,
) -> Result<DMatrix<f64>> {
    let x = dataset.x();
    let t = x * beta;
    let v = spec.variance.evaluate(x, &t)?;
    let weights = DVector::from_fn(dataset.n(), |i, _| {
        if mask.is_some_and(|m| !m[i]) {
            0.0
        } else {
            spec.link.derivative(t[i]).powi(2) / v[i]
        }
    });
    let used = mask.map_or(dataset.n(), |m| m.iter().filter(|&&k| k).count());
    if used == 0 {
        return Err(Error::AllTrimmed);
    }
    Ok(linalg::symmetrize(
        &(weighted_gram(x, &weights) / used as f64),
    ))
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    x.tr_mul(&xw)
}

/// Row-level quantities shared by the plug-in estimates.
struct PlugIn {
    x: DMatrix<f64>,
    gamma: DVector<f64>,
    jac: DMatrix<f64>,
    dlink: DVector<f64>,
    variance: DVector<f64>,
    mask: Vec<bool>,
    used: usize,
    /// Leave-one-out smooth of `x / v` on the fitted index (`n x p`).
    l_hat: DMatrix<f64>,
    /// `y - g_hat_{-i}`.
    residual: DVector<f64>,
}

impl PlugIn {
    fn new(dataset: &Dataset, spec: &GlmSpec, fit: &FitResult, kernel: Kernel) -> Result<Self> {
        if fit.center.len() != dataset.p() || fit.trim_mask.len() != dataset.n() {
            return Err(Error::Dimension(
                "fit does not belong to this dataset".into(),
            ));
        }
        let spec = fit.resolved_spec(spec);
        let centered = dataset.shifted(&fit.center);
        let x = centered.x().clone();
        let z = &x * &fit.gamma;
        let t = &z * fit.alpha;
        let variance = spec.variance.evaluate(&x, &t)?;
        let dlink = t.map(|ti| spec.link.derivative(ti));
        let jac = jacobian(&fit.scheme, &fit.theta)?;
        let (n, p) = (x.nrows(), x.ncols());
        let mut responses = DMatrix::zeros(n, p + 1);
        for i in 0..n {
            for j in 0..p {
                responses[(i, j)] = x[(i, j)] / variance[i];
            }
            responses[(i, p)] = centered.y()[i];
        }
        let index: Vec<f64> = z.iter().copied().collect();
        let smooth = LocalLinear::new(&index, fit.bandwidth, kernel)?.fit_at_samples(
            &responses,
            true,
            Some(&fit.trim_mask),
        )?;
        let mut l_hat = smooth.mean.columns(0, p).into_owned();
        let mut residual = DVector::zeros(n);
        for i in 0..n {
            if fit.trim_mask[i] {
                residual[i] = centered.y()[i] - smooth.mean[(i, p)];
            } else {
                l_hat.row_mut(i).fill(0.0);
            }
        }
        let used = fit.trim_mask.iter().filter(|&&k| k).count();
        if used == 0 {
            return Err(Error::AllTrimmed);
        }
        Ok(Self {
            x,
            gamma: fit.gamma.clone(),
            jac,
            dlink,
            variance,
            mask: fit.trim_mask.clone(),
            used,
            l_hat,
            residual,
        })
    }

    /// `avg g'^2 w_i J' a_i a_i' J` for row vectors `a_i` produced by `row`.
    fn projected_average(
        &self,
        weight: impl Fn(usize) -> f64,
        row: impl Fn(usize) -> DVector<f64>,
    ) -> DMatrix<f64> {
        let m = self.jac.ncols();
        let mut acc = DMatrix::zeros(m, m);
        for i in 0..self.x.nrows() {
            if !self.mask[i] {
                continue;
            }
            let proj = self.jac.tr_mul(&row(i));
            acc += (&proj * proj.transpose()) * (self.dlink[i].powi(2) * weight(i));
        }
        linalg::symmetrize(&(acc / self.used as f64))
    }

    /// The gap `C = avg g'^2 v J' l l' J`.
    fn cov_gap(&self) -> DMatrix<f64> {
        self.projected_average(|i| self.variance[i], |i| self.l_hat.row(i).transpose())
    }

    fn sandwich_q1(&self) -> DMatrix<f64> {
        self.projected_average(
            |i| self.residual[i].powi(2),
            |i| self.x.row(i).transpose() / self.variance[i] - self.l_hat.row(i).transpose(),
        )
    }
}

/// Plug-in `Q1` for a two-stage fit. `dataset` is the data the fit was computed
/// on (before centering); the bandwidth is the one stored in the fit.
pub fn estimate_q1(
    dataset: &Dataset,
    spec: &GlmSpec,
    fit: &FitResult,
    kernel: Kernel,
    mode: Q1Mode,
) -> Result<DMatrix<f64>> {
    let plug = PlugIn::new(dataset, spec, fit, kernel)?;
    Ok(match mode {
        Q1Mode::PopulationForm => {
            let v_hat = information(
                &dataset.shifted(&fit.center),
                &fit.resolved_spec(spec),
                &fit.beta,
                Some(&fit.trim_mask),
            )?;
            linalg::symmetrize(&(plug.jac.tr_mul(&v_hat) * &plug.jac)) - plug.cov_gap()
        }
        Q1Mode::Sandwich => plug.sandwich_q1(),
    })
}

fn block_diag(corner: f64, block: &DMatrix<f64>) -> DMatrix<f64> {
    let m = block.nrows();
    let mut w = DMatrix::zeros(m + 1, m + 1);
    w[(0, 0)] = corner;
    w.view_mut((1, 1), (m, m)).copy_from(block);
    w
}

/// `W = diag(gamma' V^-1 gamma, Vt^-1 Q1 Vt^-1)`.
pub fn assemble_w(
    v_inv: &DMatrix<f64>,
    gamma: &DVector<f64>,
    vtilde_inv: &DMatrix<f64>,
    q1: &DMatrix<f64>,
) -> DMatrix<f64> {
    let corner = gamma.dot(&(v_inv * gamma));
    block_diag(corner, &linalg::symmetrize(&(vtilde_inv * q1 * vtilde_inv)))
}

/// `W1`: as `W` with the corner replaced by
/// `(g'Vg)^-1 + g'VJ Vt^-1 Q1 Vt^-1 J'Vg / (g'Vg)^2`.
pub fn assemble_w1(
    v: &DMatrix<f64>,
    gamma: &DVector<f64>,
    jac: &DMatrix<f64>,
    vtilde_inv: &DMatrix<f64>,
    q1: &DMatrix<f64>,
) -> DMatrix<f64> {
    let inner = linalg::symmetrize(&(vtilde_inv * q1 * vtilde_inv));
    let v_gamma = v * gamma;
    let gvg = gamma.dot(&v_gamma);
    let cross = jac.tr_mul(&v_gamma);
    let corner = 1.0 / gvg + cross.dot(&(&inner * &cross)) / (gvg * gvg);
    block_diag(corner, &inner)
}

/// Margins of the classical-versus-two-stage comparisons; a margin is
/// `classical - two_stage`, so nonnegative values mean the inequality holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceComparison {
    /// `diag(V2^-1) - diag(W)` in `(alpha, theta)` coordinates.
    pub diagonal_margins_w: Vec<f64>,
    pub diagonal_margins_w1: Vec<f64>,
    /// `trace(V^-1) - trace(A W A')`.
    pub trace_margin_w: f64,
    pub trace_margin_w1: f64,
    /// `diag(V^-1) - diag(A W A')` in coefficient coordinates. Not covered by
    /// the ordering; reported for information.
    pub coefficient_margins_w: Vec<f64>,
    pub coefficient_margins_w1: Vec<f64>,
    /// `W(1,1) - W1(1,1)`.
    pub scale_margin: f64,
    pub slack: f64,
    pub diagonal_holds: bool,
    pub trace_holds: bool,
    pub scale_ordering_holds: bool,
}

impl TraceComparison {
    pub fn holds(&self) -> bool {
        self.diagonal_holds && self.trace_holds && self.scale_ordering_holds
    }

    pub fn min_margin(&self) -> f64 {
        self.diagonal_margins_w
            .iter()
            .chain(&self.diagonal_margins_w1)
            .copied()
            .chain([self.trace_margin_w, self.trace_margin_w1, self.scale_margin])
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn trace_comparison(
    v_inv: &DMatrix<f64>,
    v2_inv: &DMatrix<f64>,
    a: &DMatrix<f64>,
    w: &DMatrix<f64>,
    w1: &DMatrix<f64>,
) -> TraceComparison {
    let diag_margins = |m: &DMatrix<f64>| -> Vec<f64> {
        (0..m.nrows()).map(|k| v2_inv[(k, k)] - m[(k, k)]).collect()
    };
    let aw = a * w * a.transpose();
    let aw1 = a * w1 * a.transpose();
    let coef_margins = |m: &DMatrix<f64>| -> Vec<f64> {
        (0..m.nrows()).map(|k| v_inv[(k, k)] - m[(k, k)]).collect()
    };
    let diagonal_margins_w = diag_margins(w);
    let diagonal_margins_w1 = diag_margins(w1);
    let trace_margin_w = v_inv.trace() - aw.trace();
    let trace_margin_w1 = v_inv.trace() - aw1.trace();
    let scale_margin = w[(0, 0)] - w1[(0, 0)];
    let ok = |m: f64| m >= -COMPARISON_SLACK;
    TraceComparison {
        diagonal_holds: diagonal_margins_w
            .iter()
            .chain(&diagonal_margins_w1)
            .all(|&m| ok(m)),
        trace_holds: ok(trace_margin_w) && ok(trace_margin_w1),
        scale_ordering_holds: ok(scale_margin),
        diagonal_margins_w,
        diagonal_margins_w1,
        trace_margin_w,
        trace_margin_w1,
        coefficient_margins_w: coef_margins(&aw),
        coefficient_margins_w1: coef_margins(&aw1),
        scale_margin,
        slack: COMPARISON_SLACK,
    }
}

#[derive(Debug, Clone)]
pub struct AsymptoticReport {
    pub n: usize,
    /// Rows kept by trimming.
    pub n_used: usize,
    pub v_hat: DMatrix<f64>,
    pub v_inv: DMatrix<f64>,
    pub v_condition: f64,
    pub a: DMatrix<f64>,
    /// `(A'VA)^-1`.
    pub v2_inv: DMatrix<f64>,
    pub vtilde: DMatrix<f64>,
    /// Population-form `Q1`.
    pub q1: DMatrix<f64>,
    pub q1_sandwich: DMatrix<f64>,
    /// `Vt - Q1`.
    pub cov_gap: DMatrix<f64>,
    pub cov_gap_min_eigenvalue: f64,
    pub w: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    /// `V^-1 / n`.
    pub cov_beta_classical: DMatrix<f64>,
    /// `A W A' / n`.
    pub cov_beta_proc1: DMatrix<f64>,
    /// `A W1 A' / n`.
    pub cov_beta_proc2: DMatrix<f64>,
    /// Procedure covariances with the sandwich `Q1`.
    pub cov_beta_proc1_sandwich: DMatrix<f64>,
    pub cov_beta_proc2_sandwich: DMatrix<f64>,
    /// `J Vt^-1 Q1 Vt^-1 J' / (alpha^2 n)`.
    pub cov_gamma: DMatrix<f64>,
    /// Direction covariance of the normalized classical estimate,
    /// `J (V2^-1)_22 J' / (alpha^2 n)`.
    pub cov_gamma_classical: DMatrix<f64>,
    pub comparison: TraceComparison,
}

impl AsymptoticReport {
    /// Whether every covariance block is symmetric within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        [
            &self.cov_beta_classical,
            &self.cov_beta_proc1,
            &self.cov_beta_proc2,
            &self.cov_gamma,
            &self.cov_gamma_classical,
            &self.w,
            &self.w1,
        ]
        .iter()
        .all(|m| linalg::max_abs_diff(m, &m.transpose()) <= tol)
    }
}

/// Every plug-in matrix for a fitted model. `dataset` and `spec` are the inputs
/// of the fit; `kernel` should be the fit's smoothing kernel.
pub fn asymptotic_report(
    dataset: &Dataset,
    spec: &GlmSpec,
    fit: &FitResult,
    kernel: Kernel,
) -> Result<AsymptoticReport> {
    let plug = PlugIn::new(dataset, spec, fit, kernel)?;
    let resolved = fit.resolved_spec(spec);
    let centered = dataset.shifted(&fit.center);
    let v_hat = estimate_v(&centered, &resolved, &fit.beta, Some(&fit.trim_mask))?;
    let inv = linalg::sym_inverse(&v_hat);
    let v_inv = inv.inverse;

    let jac = &plug.jac;
    let a = assemble_a(&fit.scheme, &fit.theta)?;
    let v2_inv = linalg::sym_inverse(&(a.tr_mul(&v_hat) * &a)).inverse;
    let vtilde = linalg::symmetrize(&(jac.tr_mul(&v_hat) * jac));
    let vtilde_inv = linalg::sym_inverse(&vtilde).inverse;
    let cov_gap = plug.cov_gap();
    let q1 = &vtilde - &cov_gap;
    let q1_sandwich = plug.sandwich_q1();

    let w = assemble_w(&v_inv, &plug.gamma, &vtilde_inv, &q1);
    let w1 = assemble_w1(&v_hat, &plug.gamma, jac, &vtilde_inv, &q1);
    let w_s = assemble_w(&v_inv, &plug.gamma, &vtilde_inv, &q1_sandwich);
    let w1_s = assemble_w1(&v_hat, &plug.gamma, jac, &vtilde_inv, &q1_sandwich);

    let n = dataset.n() as f64;
    let sandwich = |m: &DMatrix<f64>| linalg::symmetrize(&(&a * m * a.transpose() / n));
    let scale = fit.alpha * fit.alpha * n;
    let inner = &vtilde_inv * &q1 * &vtilde_inv;
    let cov_gamma = linalg::symmetrize(&(jac * inner * jac.transpose() / scale));
    let m = jac.ncols();
    let v2_block = v2_inv.view((1, 1), (m, m)).into_owned();
    let cov_gamma_classical = linalg::symmetrize(&(jac * v2_block * jac.transpose() / scale));
    let comparison = trace_comparison(&v_inv, &v2_inv, &a, &w, &w1);

    Ok(AsymptoticReport {
        n: dataset.n(),
        n_used: plug.used,
        cov_beta_classical: &v_inv / n,
        cov_beta_proc1: sandwich(&w),
        cov_beta_proc2: sandwich(&w1),
        cov_beta_proc1_sandwich: sandwich(&w_s),
        cov_beta_proc2_sandwich: sandwich(&w1_s),
        cov_gamma,
        cov_gamma_classical,
        cov_gap_min_eigenvalue: linalg::min_eigenvalue(&cov_gap),
        v_condition: inv.condition,
        v_hat,
        v_inv,
        a,
        v2_inv,
        vtilde,
        q1,
        q1_sandwich,
        cov_gap,
        w,
        w1,
        comparison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Link, VarianceSpec};
    use crate::reparam::{gamma_from_theta, ReparamScheme};
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_built_block_arithmetic() {
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let scheme = ReparamScheme::remove_one_component(0, 2).unwrap();
        let theta = DVector::from_vec(vec![0.0]);
        let gamma = gamma_from_theta(&scheme, &theta).unwrap();
        let jac = jacobian(&scheme, &theta).unwrap();
        let vtilde = jac.tr_mul(&v) * &jac;
        let vtilde_inv = linalg::sym_inverse(&vtilde).inverse;
        let v_inv = linalg::sym_inverse(&v).inverse;
        let w = assemble_w(&v_inv, &gamma, &vtilde_inv, &vtilde);
        let w1 = assemble_w1(&v, &gamma, &jac, &vtilde_inv, &vtilde);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0]));
        assert_abs_diff_eq!(w, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(w1, expected, epsilon = 1e-14);
    }

    #[test]
    fn identity_link_v_is_gram() {
        let x = DMatrix::from_fn(40, 2, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let y = DVector::from_fn(40, |i, _| i as f64 * 0.1);
        let data = Dataset::new(x.clone(), y).unwrap();
        let spec = GlmSpec::new(Link::Identity, VarianceSpec::Constant);
        let v = estimate_v(&data, &spec, &DVector::from_vec(vec![0.3, 0.1]), None).unwrap();
        assert_abs_diff_eq!(v, x.tr_mul(&x) / 40.0, epsilon = 1e-14);
    }

    #[test]
    fn flat_link_region_is_singular() {
        let flat = Link::custom("flat", |_| 0.0, |_| 0.0);
        let x = DMatrix::from_fn(20, 2, |i, j| (i + j) as f64);
        let data = Dataset::new(x, DVector::zeros(20)).unwrap();
        let spec = GlmSpec::new(flat, VarianceSpec::Constant);
        let err = estimate_v(&data, &spec, &DVector::from_vec(vec![1.0, 1.0]), None).unwrap_err();
        assert!(matches!(err, Error::SingularV { .. }));
    }
}
