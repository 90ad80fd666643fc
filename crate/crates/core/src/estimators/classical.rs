//! Classical quasi-likelihood: `G(beta) = sum (y - g(beta'x)) g'(beta'x) x / v = 0`.

use nalgebra::{DMatrix, DVector};

use super::{scale, JacobianMode, SolverConfig, Stage, StageDiagnostics};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, GlmSpec, VarianceSpec};
use crate::smoother::{self, SmootherConfig};

/// Starting value for the classical fit.
#[derive(Debug, Clone, Default)]
pub enum Init {
    /// Least-squares direction scaled by a one-dimensional solve along it.
    #[default]
    Auto,
    Given(DVector<f64>),
}

#[derive(Debug, Clone)]
pub struct ClassicalFit {
    pub beta: DVector<f64>,
    pub stages: Vec<StageDiagnostics>,
    /// Per-observation variances when the variance function was estimated.
    pub estimated_variance: Option<Vec<f64>>,
}

struct Score {
    value: DVector<f64>,
    /// `g'(t)^2 / v` per row, for the scoring matrix.
    info_weights: DVector<f64>,
}

fn score(dataset: &Dataset, spec: &GlmSpec, beta: &DVector<f64>) -> Result<Score> {
    let x = dataset.x();
    let t = x * beta;
    let v = spec.variance.evaluate(x, &t)?;
    let mut w = DVector::zeros(dataset.n());
    let mut info = DVector::zeros(dataset.n());
    for i in 0..dataset.n() {
        let d = spec.link.derivative(t[i]);
        w[i] = (dataset.y()[i] - spec.link.mean(t[i])) * d / v[i];
        info[i] = d * d / v[i];
    }
    let value = x.tr_mul(&w);
    if value.iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain("quasi-score is not finite".into()));
    }
    Ok(Score {
        value,
        info_weights: info,
    })
}

/// The quasi-score `G(beta)`; index-dependent variances are evaluated at `beta`.
pub fn quasi_score(dataset: &Dataset, spec: &GlmSpec, beta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(score(dataset, spec, beta)?.value)
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    x.tr_mul(&xw)
}

fn fd_jacobian(
    dataset: &Dataset,
    spec: &GlmSpec,
    beta: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let p = beta.len();
    let mut jac = DMatrix::zeros(p, p);
    for k in 0..p {
        let h = step * beta[k].abs().max(1.0);
        let mut hi = beta.clone();
        let mut lo = beta.clone();
        hi[k] += h;
        lo[k] -= h;
        let d = (quasi_score(dataset, spec, &hi)? - quasi_score(dataset, spec, &lo)?) / (2.0 * h);
        jac.set_column(k, &d);
    }
    Ok(jac)
}

/// Solves `G(beta) = 0` by Fisher scoring with backtracking on `|G|`, switching
/// to a finite-difference Newton step when scoring stalls.
fn solve_ql(
    dataset: &Dataset,
    spec: &GlmSpec,
    start: DVector<f64>,
    config: &SolverConfig,
    stage: Stage,
) -> Result<(DVector<f64>, StageDiagnostics)> {
    let root_n = (dataset.n() as f64).sqrt();
    let mut diag = StageDiagnostics::new(stage);
    let mut beta = start;
    let mut current = score(dataset, spec, &beta)?;
    let mut norm = current.value.norm();
    diag.residual_norm = norm / root_n;

    while diag.residual_norm >= config.residual_tol {
        if diag.iterations >= config.max_iter {
            return Err(diag.fail());
        }
        diag.iterations += 1;

        let mut accepted = None;
        let mut any_direction = false;
        let modes: &[bool] = match config.jacobian {
            JacobianMode::Analytic => &[false, true],
            JacobianMode::FiniteDifference => &[true],
        };
        for &use_fd in modes {
            let direction = if use_fd {
                let jac = fd_jacobian(dataset, spec, &beta, config.fd_step)?;
                linalg::solve(&jac, &current.value).map(|d| -d)
            } else {
                let info = weighted_gram(dataset.x(), &current.info_weights);
                linalg::solve(&info, &current.value)
            };
            let Some(direction) = direction else {
                continue;
            };
            any_direction = true;
            let mut s = 1.0;
            for halving in 0..=config.max_halvings {
                let candidate = &beta + &direction * s;
                if let Ok(next) = score(dataset, spec, &candidate) {
                    let next_norm = next.value.norm();
                    if next_norm < norm {
                        diag.halvings += halving;
                        diag.fd_steps += use_fd as usize;
                        accepted = Some((candidate, next, next_norm));
                        break;
                    }
                }
                s *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((candidate, next, next_norm)) = accepted else {
            if !any_direction {
                return Err(Error::SingularJacobian(stage.to_string()));
            }
            return Err(diag.fail());
        };
        diag.step_norm = (&candidate - &beta).norm();
        beta = candidate;
        current = next;
        norm = next_norm;
        diag.residual_norm = norm / root_n;
    }
    diag.converged = true;
    Ok((beta, diag))
}

fn auto_init(dataset: &Dataset, spec: &GlmSpec, config: &SolverConfig) -> DVector<f64> {
    let x = dataset.x();
    let ols = x
        .tr_mul(x)
        .cholesky()
        .map(|c| c.solve(&x.tr_mul(dataset.y())));
    let Some(ols) = ols else {
        return DVector::zeros(dataset.p());
    };
    let norm = ols.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return DVector::zeros(dataset.p());
    }
    let direction = &ols / norm;
    match scale::solve_scale(dataset, spec, &direction, norm, None, config) {
        Ok(fit) => direction * fit.alpha,
        Err(_) => ols,
    }
}

/// Classical quasi-likelihood estimate on the predictors as given (no centering).
///
/// With [`VarianceSpec::UnknownOfIndex`] an unweighted fit is computed first,
/// its squared residuals are smoothed on the fitted index, and the equation is
/// solved once more with those variances held fixed.
pub fn fit_classical_ql(
    dataset: &Dataset,
    spec: &GlmSpec,
    init: &Init,
    smoother_config: &SmootherConfig,
    config: &SolverConfig,
) -> Result<ClassicalFit> {
    config.validate()?;
    if let VarianceSpec::UnknownOfIndex = spec.variance {
        let unweighted = spec.with_variance(VarianceSpec::Constant);
        let first = fit_classical_ql(dataset, &unweighted, init, smoother_config, config)?;
        let variances = estimate_variances(dataset, spec, &first.beta, smoother_config)?;
        let weighted = spec.with_variance(VarianceSpec::PerObservation(variances.clone().into()));
        let (beta, diag) = solve_ql(dataset, &weighted, first.beta, config, Stage::Reweighted)?;
        let mut stages = first.stages;
        stages.push(diag);
        return Ok(ClassicalFit {
            beta,
            stages,
            estimated_variance: Some(variances),
        });
    }
    let start = match init {
        Init::Auto => auto_init(dataset, spec, config),
        Init::Given(beta) => {
            if beta.len() != dataset.p() {
                return Err(Error::Dimension(format!(
                    "initial value has {} entries for {} predictors",
                    beta.len(),
                    dataset.p()
                )));
            }
            beta.clone()
        }
    };
    let (beta, diag) = solve_ql(dataset, spec, start, config, Stage::Classical)?;
    Ok(ClassicalFit {
        beta,
        stages: vec![diag],
        estimated_variance: None,
    })
}

/// Smoothed squared residuals of the fit at `beta`, evaluated at every row.
/// Rows whose kernel window is degenerate get the mean squared residual.
fn estimate_variances(
    dataset: &Dataset,
    spec: &GlmSpec,
    beta: &DVector<f64>,
    smoother_config: &SmootherConfig,
) -> Result<Vec<f64>> {
    let t = dataset.x() * beta;
    let residuals: Vec<f64> = t
        .iter()
        .zip(dataset.y().iter())
        .map(|(&ti, &yi)| yi - spec.link.mean(ti))
        .collect();
    let index: Vec<f64> = t.iter().copied().collect();
    let cfg = smoother_config.with_leave_one_out(false);
    let smoothed = smoother::smooth_squared_residuals(&index, &residuals, &cfg)?;
    let fallback = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    let mut degenerate = 0usize;
    let values = index
        .iter()
        .map(|&ti| match smoothed.eval(ti) {
            Ok(v) => Ok(v),
            Err(Error::DegenerateWindow { .. }) => {
                degenerate += 1;
                Ok(fallback.max(crate::model::VARIANCE_FLOOR))
            }
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<f64>>>()?;
    if degenerate > 0 {
        log::warn!("{degenerate} variance estimates fell back to the mean squared residual");
    }
    Ok(values)
}
