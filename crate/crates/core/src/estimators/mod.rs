//! Estimating-equation solvers and the two-stage procedures.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reparam::SchemeKind;
use crate::smoother::SmootherConfig;

mod classical;
mod direction;
mod procedure;
mod scale;

pub use classical::{fit_classical_ql, quasi_score, ClassicalFit, Init};
pub use direction::{direction_equation, solve_direction, DirectionFit};
pub use procedure::{fit, fit_both, procedure_one, procedure_two};
pub use scale::{scale_equation, solve_scale, ScaleFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    /// Scoring matrices where available, finite differences as a fallback.
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Tolerance on the parameter step norm.
    pub step_tol: f64,
    /// Tolerance on `|equation| / sqrt(n)`.
    pub residual_tol: f64,
    pub max_halvings: usize,
    pub fd_step: f64,
    pub jacobian: JacobianMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            step_tol: 1e-8,
            residual_tol: 1e-6,
            max_halvings: 20,
            fd_step: 1e-6,
            jacobian: JacobianMode::Analytic,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.max_iter == 0
            || !positive(self.step_tol)
            || !positive(self.residual_tol)
            || !positive(self.fd_step)
        {
            return Err(Error::InvalidConfig(format!(
                "solver settings must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Everything a two-stage fit needs besides the data and model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub scheme: SchemeKind,
    pub smoother: SmootherConfig,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Classical,
    /// Classical refit with estimated variances.
    Reweighted,
    Direction,
    Scale,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Classical => "classical quasi-likelihood",
            Stage::Reweighted => "reweighted quasi-likelihood",
            Stage::Direction => "direction equation",
            Stage::Scale => "scale equation",
        })
    }
}

/// Convergence record of one solver stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage: Stage,
    pub iterations: usize,
    /// Final `|equation| / sqrt(n)`.
    pub residual_norm: f64,
    /// Norm of the last accepted step.
    pub step_norm: f64,
    pub converged: bool,
    /// Total step halvings during line searches.
    pub halvings: usize,
    /// Iterations that used a finite-difference Jacobian.
    pub fd_steps: usize,
    /// Iterations whose iterate was projected back into the parameter domain.
    pub projections: usize,
}

impl StageDiagnostics {
    pub(crate) fn new(stage: Stage) -> Self {
        Self {
            stage,
            iterations: 0,
            residual_norm: f64::NAN,
            step_norm: 0.0,
            converged: false,
            halvings: 0,
            fd_steps: 0,
            projections: 0,
        }
    }

    pub(crate) fn fail(self) -> Error {
        Error::NoConvergence(Box::new(self))
    }
}
