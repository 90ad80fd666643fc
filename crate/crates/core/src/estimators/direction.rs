//! Direction equation
//! `SG(theta) = sum_i I_i (y_i - g_hat_{-i}(gamma(theta)'x_i)) g'(alpha gamma(theta)'x_i) J(theta)'x_i / v_i`,
//! where `g_hat_{-i}` is the leave-one-out local linear regression of `y` on the
//! index `gamma(theta)'x` and `I_i` the trimming indicator.

use nalgebra::{DMatrix, DVector};

use super::{JacobianMode, SolverConfig, Stage, StageDiagnostics};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg;
use crate::model::{Dataset, GlmSpec, VarianceSpec};
use crate::reparam::{gamma_from_theta, jacobian, ReparamScheme, SchemeKind};
use crate::smoother::{self, LocalLinear, SmootherConfig};

/// Consecutive boundary projections tolerated before giving up.
const MAX_BOUNDARY_STEPS: usize = 10;
/// Residual reduction per surrogate step above which Newton steps take over.
const SLOW_CONTRACTION: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct DirectionFit {
    pub theta: DVector<f64>,
    pub diagnostics: StageDiagnostics,
    /// Trimming indicator computed at the starting direction.
    pub mask: Vec<bool>,
    pub trimmed: usize,
    pub bandwidth: f64,
}

struct Problem<'a> {
    dataset: &'a Dataset,
    spec: &'a GlmSpec,
    scheme: &'a ReparamScheme,
    alpha: f64,
    mask: &'a [bool],
    bandwidth: f64,
    kernel: Kernel,
    fixed_variance: Option<DVector<f64>>,
}

struct Evaluation {
    equation: DVector<f64>,
    /// `alpha J' (sum I g'^2 x x' / v) J`, the scoring surrogate for `-dSG/dtheta`.
    surrogate: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    fn new(
        dataset: &'a Dataset,
        spec: &'a GlmSpec,
        scheme: &'a ReparamScheme,
        alpha: f64,
        mask: &'a [bool],
        bandwidth: f64,
        kernel: Kernel,
    ) -> Result<Self> {
        if let VarianceSpec::UnknownOfIndex = spec.variance {
            return Err(Error::InvalidConfig(
                "the direction equation needs a resolved variance function".into(),
            ));
        }
        if scheme.dim != dataset.p() {
            return Err(Error::Dimension(format!(
                "scheme for p = {} applied to {} predictors",
                scheme.dim,
                dataset.p()
            )));
        }
        if mask.len() != dataset.n() {
            return Err(Error::Dimension(format!(
                "trimming mask has {} entries for {} rows",
                mask.len(),
                dataset.n()
            )));
        }
        let fixed_variance = if spec.variance.depends_on_index() {
            None
        } else {
            Some(
                spec.variance
                    .evaluate(dataset.x(), &DVector::zeros(dataset.n()))?,
            )
        };
        Ok(Self {
            dataset,
            spec,
            scheme,
            alpha,
            mask,
            bandwidth,
            kernel,
            fixed_variance,
        })
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Result<Evaluation> {
        let x = self.dataset.x();
        let y = self.dataset.y();
        let gamma = gamma_from_theta(self.scheme, theta)?;
        let jac = jacobian(self.scheme, theta)?;
        let z = x * &gamma;
        let t = &z * self.alpha;
        let v = match &self.fixed_variance {
            Some(v) => v.clone(),
            None => self.spec.variance.evaluate(x, &t)?,
        };
        let index: Vec<f64> = z.iter().copied().collect();
        let responses = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        let smooth = LocalLinear::new(&index, self.bandwidth, self.kernel)?.fit_at_samples(
            &responses,
            true,
            Some(self.mask),
        )?;

        let n = self.dataset.n();
        let mut w = DVector::zeros(n);
        let mut info = DVector::zeros(n);
        for i in 0..n {
            if !self.mask[i] {
                continue;
            }
            let d = self.spec.link.derivative(t[i]);
            w[i] = (y[i] - smooth.mean[(i, 0)]) * d / v[i];
            info[i] = d * d / v[i];
        }
        let equation = jac.tr_mul(&x.tr_mul(&w));
        if equation.iter().any(|e| !e.is_finite()) {
            return Err(Error::Domain("direction equation is not finite".into()));
        }
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= info[i];
        }
        let gram = x.tr_mul(&xw);
        let surrogate = jac.tr_mul(&gram) * &jac * self.alpha;
        Ok(Evaluation {
            equation,
            surrogate,
        })
    }

    fn equation(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(theta)?.equation)
    }

    /// Central-difference Jacobian of the equation, one-sided near the domain edge.
    fn fd_jacobian(
        &self,
        theta: &DVector<f64>,
        base: &DVector<f64>,
        step: f64,
    ) -> Option<DMatrix<f64>> {
        let m = theta.len();
        let mut jac = DMatrix::zeros(m, m);
        for k in 0..m {
            let h = step * theta[k].abs().max(1.0);
            let mut hi = theta.clone();
            let mut lo = theta.clone();
            hi[k] += h;
            lo[k] -= h;
            let column = match (self.equation(&hi), self.equation(&lo)) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
                (Ok(a), Err(_)) => (a - base) / h,
                (Err(_), Ok(b)) => (base - b) / h,
                (Err(_), Err(_)) => return None,
            };
            jac.set_column(k, &column);
        }
        Some(jac)
    }
}

/// `SG(theta)` with a given trimming mask and bandwidth.
#[allow(clippy::too_many_arguments)]
pub fn direction_equation(
    dataset: &Dataset,
    spec: &GlmSpec,
    scheme: &ReparamScheme,
    alpha: f64,
    theta: &DVector<f64>,
    mask: &[bool],
    bandwidth: f64,
    kernel: Kernel,
) -> Result<DVector<f64>> {
    Problem::new(dataset, spec, scheme, alpha, mask, bandwidth, kernel)?.equation(theta)
}

/// Solves `SG(theta) = 0` for the direction, holding the scale at `alpha_hat`.
///
/// Trimming and bandwidth are fixed at the starting direction. Steps use the
/// scoring surrogate `alpha J'VJ` while it contracts the residual by at least
/// half per iteration and finite-difference Newton steps afterwards.
pub fn solve_direction(
    dataset: &Dataset,
    spec: &GlmSpec,
    scheme: &ReparamScheme,
    alpha_hat: f64,
    theta_init: &DVector<f64>,
    smoother_config: &SmootherConfig,
    config: &SolverConfig,
) -> Result<DirectionFit> {
    config.validate()?;
    smoother_config.validate()?;
    if !(alpha_hat != 0.0 && alpha_hat.is_finite()) {
        return Err(Error::Domain(format!(
            "scale {alpha_hat} must be finite and nonzero"
        )));
    }
    let (mut theta, _) = scheme.project(theta_init);
    let gamma0 = gamma_from_theta(scheme, &theta)?;
    let index0: Vec<f64> = (dataset.x() * &gamma0).iter().copied().collect();
    let bandwidth = smoother_config.resolve_bandwidth(&index0)?;
    let trim = smoother::trimming_indicator(&index0, smoother_config)?;
    let problem = Problem::new(
        dataset,
        spec,
        scheme,
        alpha_hat,
        &trim.mask,
        bandwidth,
        smoother_config.kernel,
    )?;

    let root_n = (dataset.n() as f64).sqrt();
    let mut diag = StageDiagnostics::new(Stage::Direction);
    let mut current = problem.evaluate(&theta)?;
    let mut norm = current.equation.norm();
    diag.residual_norm = norm / root_n;
    let mut newton = config.jacobian == JacobianMode::FiniteDifference;
    let mut boundary_run = 0usize;

    while diag.residual_norm >= config.residual_tol {
        if diag.iterations >= config.max_iter {
            return Err(diag.fail());
        }
        diag.iterations += 1;

        let mut accepted = None;
        let mut any_direction = false;
        for use_fd in [newton, !newton] {
            let direction = if use_fd {
                problem
                    .fd_jacobian(&theta, &current.equation, config.fd_step)
                    .and_then(|jac| linalg::solve(&jac, &current.equation))
                    .map(|d| -d)
            } else {
                linalg::solve(&current.surrogate, &current.equation)
            };
            let Some(direction) = direction else {
                continue;
            };
            any_direction = true;
            let mut s = 1.0;
            for halving in 0..=config.max_halvings {
                let (candidate, clamped) = scheme.project(&(&theta + &direction * s));
                if let Ok(next) = problem.evaluate(&candidate) {
                    let next_norm = next.equation.norm();
                    if next_norm < norm {
                        diag.halvings += halving;
                        accepted = Some((candidate, clamped, next, next_norm, use_fd));
                        break;
                    }
                }
                s *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((candidate, clamped, next, next_norm, used_fd)) = accepted else {
            if !any_direction {
                return Err(Error::SingularJacobian(Stage::Direction.to_string()));
            }
            return Err(diag.fail());
        };
        if used_fd {
            diag.fd_steps += 1;
            newton = true;
        } else if next_norm > SLOW_CONTRACTION * norm {
            newton = true;
        }
        if clamped {
            diag.projections += 1;
            if scheme.kind == SchemeKind::RemoveOneComponent {
                boundary_run += 1;
                if boundary_run > MAX_BOUNDARY_STEPS {
                    return Err(Error::BoundaryStall(boundary_run));
                }
            }
        } else {
            boundary_run = 0;
        }
        diag.step_norm = (&candidate - &theta).norm();
        theta = candidate;
        current = next;
        norm = next_norm;
        diag.residual_norm = norm / root_n;
    }
    diag.converged = true;
    Ok(DirectionFit {
        theta,
        diagnostics: diag,
        mask: trim.mask,
        trimmed: trim.trimmed,
        bandwidth,
    })
}
