//! Two-stage semiparametric quasi-likelihood estimation for generalized linear
//! models `Y = g(beta' X) + eps`.
//!
//! The coefficient vector is split as `beta = alpha * gamma` with `|gamma| = 1`.
//! A classical quasi-likelihood fit gives starting values; the direction is then
//! re-estimated from an estimating equation in which the known mean function is
//! replaced by a leave-one-out local linear estimate of `E(Y | gamma'X)`, which
//! lowers the asymptotic variance whenever the predictors are correlated with
//! the index. The scale is either kept (procedure one) or re-estimated along the
//! new direction (procedure two).
//!
//! ```no_run
//! use semiql::{procedure_one, Dataset, FitOptions, GlmSpec, Link, VarianceSpec};
//! # fn data() -> Dataset { unimplemented!() }
//! let dataset = data();
//! let spec = GlmSpec::new(Link::LogisticMean, VarianceSpec::Constant);
//! let fit = procedure_one(&dataset, &spec, &FitOptions::default())?;
//! println!("beta = {}", fit.beta);
//! # Ok::<(), semiql::Error>(())
//! ```

// `!(x <= limit)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod reparam;
pub mod simulation;
pub mod smoother;

pub use asymptotics::{asymptotic_report, AsymptoticReport, Q1Mode, TraceComparison};
pub use error::{Error, Result};
pub use estimators::{
    fit, fit_classical_ql, procedure_one, procedure_two, solve_direction, solve_scale, FitOptions,
    Init, SolverConfig, StageDiagnostics,
};
pub use kernel::Kernel;
pub use model::{
    spec_from_names, validate, Dataset, FitResult, GlmSpec, Link, LinkName, Procedure,
    VarianceName, VarianceSpec,
};
pub use reparam::{ReparamScheme, SchemeKind};
pub use smoother::{Bandwidth, SmootherConfig, Trimming};
