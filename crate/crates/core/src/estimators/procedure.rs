//! The two-stage procedures: classical fit, direction equation, then either the
//! classical scale (procedure one) or a re-estimated scale (procedure two).

use super::{fit_classical_ql, solve_direction, solve_scale, FitOptions, Init};
use crate::error::{Error, Result};
use crate::model::{self, Dataset, FitResult, GlmSpec, Procedure, VarianceSpec};
use crate::reparam::{gamma_from_theta, select_pivot, theta_from_gamma, ReparamScheme};

pub fn procedure_one(dataset: &Dataset, spec: &GlmSpec, options: &FitOptions) -> Result<FitResult> {
    fit(dataset, spec, Procedure::One, options)
}

pub fn procedure_two(dataset: &Dataset, spec: &GlmSpec, options: &FitOptions) -> Result<FitResult> {
    fit(dataset, spec, Procedure::Two, options)
}

/// Runs a two-stage procedure on the column-centered predictors.
pub fn fit(
    dataset: &Dataset,
    spec: &GlmSpec,
    procedure: Procedure,
    options: &FitOptions,
) -> Result<FitResult> {
    let (one, two) = run(dataset, spec, procedure == Procedure::Two, options)?;
    match two {
        Some(two) => two,
        None => Ok(one),
    }
}

/// Both procedures from one shared first and second stage. The outer error is
/// a failure of the shared stages; the inner one a failure of the scale equation.
pub fn fit_both(
    dataset: &Dataset,
    spec: &GlmSpec,
    options: &FitOptions,
) -> Result<(FitResult, Result<FitResult>)> {
    let (one, two) = run(dataset, spec, true, options)?;
    Ok((one, two.expect("procedure two requested")))
}

#[allow(clippy::type_complexity)]
fn run(
    dataset: &Dataset,
    spec: &GlmSpec,
    with_scale: bool,
    options: &FitOptions,
) -> Result<(FitResult, Option<Result<FitResult>>)> {
    model::validate(dataset, spec, true)?;
    let (centered, center) = dataset.centered();

    let classical = fit_classical_ql(
        &centered,
        spec,
        &Init::Auto,
        &options.smoother,
        &options.solver,
    )?;
    let resolved = match &classical.estimated_variance {
        Some(v) => spec.with_variance(VarianceSpec::PerObservation(v.clone().into())),
        None => spec.clone(),
    };
    let beta_initial = classical.beta;
    let norm = beta_initial.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Domain(
            "classical estimate is zero; the direction is not identified".into(),
        ));
    }
    let (pivot, sign) = select_pivot(&(&beta_initial / norm));
    let gamma_initial = &beta_initial * (sign / norm);
    let alpha_initial = sign * norm;
    let scheme = ReparamScheme::new(options.scheme, pivot, dataset.p())?;
    let theta_initial = theta_from_gamma(&scheme, &gamma_initial)?;

    let direction = solve_direction(
        &centered,
        &resolved,
        &scheme,
        alpha_initial,
        &theta_initial,
        &options.smoother,
        &options.solver,
    )?;
    let gamma = gamma_from_theta(&scheme, &direction.theta)?;

    let mut stages = classical.stages;
    stages.push(direction.diagnostics);
    let one = FitResult {
        procedure: Procedure::One,
        beta: &gamma * alpha_initial,
        alpha: alpha_initial,
        gamma,
        theta: direction.theta,
        scheme,
        beta_initial,
        alpha_initial,
        stages,
        trim_mask: direction.mask,
        trimmed_count: direction.trimmed,
        bandwidth: direction.bandwidth,
        center,
        estimated_variance: classical.estimated_variance,
    };
    if !with_scale {
        return Ok((one, None));
    }
    let two = solve_scale(
        &centered,
        &resolved,
        &one.gamma,
        alpha_initial,
        Some(&one.trim_mask),
        &options.solver,
    )
    .map(|scale| {
        let mut two = one.clone();
        two.procedure = Procedure::Two;
        two.alpha = scale.alpha;
        two.beta = &two.gamma * scale.alpha;
        two.stages.push(scale.diagnostics);
        two
    });
    Ok((one, Some(two)))
}
