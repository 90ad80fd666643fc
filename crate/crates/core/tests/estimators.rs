mod common;

use common::{draw, gaussian, noiseless};
use nalgebra::{DMatrix, DVector};
use semiql::estimators::{direction_equation, quasi_score, scale_equation};
use semiql::reparam::{select_pivot, theta_from_gamma};
use semiql::simulation::{run_monte_carlo, Design, Estimator};
use semiql::{
    fit, procedure_one, procedure_two, solve_direction, spec_from_names, FitOptions, GlmSpec,
    Kernel, Link, LinkName, Procedure, ReparamScheme, SchemeKind, SmootherConfig, Trimming,
    VarianceName, VarianceSpec,
};

fn constant(link: LinkName) -> GlmSpec {
    spec_from_names(link, VarianceName::Constant)
}

fn options(kind: SchemeKind) -> FitOptions {
    FitOptions {
        scheme: kind,
        ..FitOptions::default()
    }
}

/// No trimming. The Gaussian kernel keeps isolated tail points from having empty windows.
fn keep_all() -> FitOptions {
    FitOptions {
        smoother: SmootherConfig::default()
            .with_trimming(Trimming::Threshold(0.0))
            .with_kernel(Kernel::Gaussian),
        ..FitOptions::default()
    }
}

/// `theta_0` in the fitted scheme, with `beta0` normalized and sign-fixed at the fit's pivot.
fn true_theta(scheme: &ReparamScheme, beta0: &[f64]) -> DVector<f64> {
    let b = DVector::from_column_slice(beta0);
    let gamma = &b / b.norm();
    let sign = gamma[scheme.pivot].signum();
    theta_from_gamma(scheme, &(gamma * sign)).unwrap()
}

#[test]
fn noiseless_direction_is_recovered_by_both_schemes() {
    let beta0 = [1.0, 0.6, -0.4];
    let data = draw(
        500,
        Design::SphericalNormal,
        &beta0,
        LinkName::LogisticMean,
        noiseless(),
        11,
    );
    for kind in [SchemeKind::RemoveOneComponent, SchemeKind::Polar] {
        let fit = procedure_one(&data, &constant(LinkName::LogisticMean), &options(kind)).unwrap();
        let theta0 = true_theta(&fit.scheme, &beta0);
        let err = (&fit.theta - &theta0).amax();
        assert!(err < 2e-2, "{kind}: theta error {err}");
    }
}

#[test]
fn starting_at_the_truth_converges_immediately() {
    let beta0 = [1.2, -0.5, 0.8];
    let data = draw(
        500,
        Design::SphericalNormal,
        &beta0,
        LinkName::LogisticMean,
        noiseless(),
        12,
    );
    let b = DVector::from_column_slice(&beta0);
    let (pivot, _) = select_pivot(&(&b / b.norm()));
    for kind in [SchemeKind::RemoveOneComponent, SchemeKind::Polar] {
        let scheme = ReparamScheme::new(kind, pivot, 3).unwrap();
        let theta0 = true_theta(&scheme, &beta0);
        let fit = solve_direction(
            &data,
            &constant(LinkName::LogisticMean),
            &scheme,
            b.norm(),
            &theta0,
            &SmootherConfig::default(),
            &Default::default(),
        )
        .unwrap();
        assert!(fit.diagnostics.converged);
        assert!(
            fit.diagnostics.iterations <= 3,
            "{kind}: {} iterations",
            fit.diagnostics.iterations
        );
    }
}

#[test]
fn two_predictor_identity_noiseless_is_exact() {
    let beta0 = [0.8, -1.3];
    let data = draw(
        300,
        Design::SphericalNormal,
        &beta0,
        LinkName::Identity,
        noiseless(),
        13,
    );
    let fit = procedure_one(&data, &constant(LinkName::Identity), &FitOptions::default()).unwrap();
    let err = (&fit.beta - DVector::from_column_slice(&beta0)).amax();
    assert!(err < 1e-4, "beta error {err}");
}

#[test]
fn negative_dominant_component_keeps_its_sign_in_alpha() {
    let beta0 = [-2.0, 0.5, 0.3];
    let data = draw(
        600,
        Design::SphericalNormal,
        &beta0,
        LinkName::LogisticMean,
        gaussian(0.05),
        14,
    );
    let fit = procedure_one(
        &data,
        &constant(LinkName::LogisticMean),
        &FitOptions::default(),
    )
    .unwrap();
    assert_eq!(fit.scheme.pivot, 0);
    assert!(fit.gamma[0] > 0.0);
    assert!(fit.alpha < 0.0);
    assert!((&fit.beta - &fit.gamma * fit.alpha).amax() < 1e-10);
    let b0 = DVector::from_column_slice(&beta0);
    let cosine = fit.beta.dot(&b0) / (fit.beta.norm() * b0.norm());
    assert!(cosine > 0.99, "cosine {cosine}");
}

#[test]
fn procedures_agree_on_noiseless_data() {
    let beta0 = [1.0, 2.0, -0.5];
    let data = draw(
        400,
        Design::UniformCube,
        &beta0,
        LinkName::Identity,
        noiseless(),
        15,
    );
    let spec = constant(LinkName::Identity);
    let one = procedure_one(&data, &spec, &keep_all()).unwrap();
    let two = procedure_two(&data, &spec, &keep_all()).unwrap();
    assert!((&one.beta - &two.beta).amax() < 1e-6);
}

#[test]
fn returned_solutions_satisfy_their_equations() {
    let beta0 = [1.5, 1.5, 1.5, 1.5];
    let data = draw(
        400,
        Design::Ar1 { rho: 0.7 },
        &beta0,
        LinkName::LogisticMean,
        gaussian(0.3),
        16,
    );
    let spec = constant(LinkName::LogisticMean);
    let options = FitOptions::default();
    let fit = procedure_two(&data, &spec, &options).unwrap();
    let (centered, _) = data.centered();
    let root_n = (data.n() as f64).sqrt();
    let tol = options.solver.residual_tol;

    let g = quasi_score(&centered, &spec, &fit.beta_initial).unwrap();
    assert!(g.norm() / root_n < tol);
    let sg = direction_equation(
        &centered,
        &spec,
        &fit.scheme,
        fit.alpha_initial,
        &fit.theta,
        &fit.trim_mask,
        fit.bandwidth,
        options.smoother.kernel,
    )
    .unwrap();
    assert!(
        sg.norm() / root_n < tol,
        "direction residual {}",
        sg.norm() / root_n
    );
    let (value, _) = scale_equation(
        &centered,
        &spec,
        &fit.gamma,
        fit.alpha,
        Some(&fit.trim_mask),
    )
    .unwrap();
    assert!(value.abs() / root_n < tol);
    assert!(fit.stages.iter().all(|s| s.converged));
}

#[test]
fn direction_is_invariant_to_rescaling_the_response() {
    let beta0 = [1.0, -0.7, 0.4];
    let data = draw(
        500,
        Design::Ar1 { rho: 0.5 },
        &beta0,
        LinkName::LogisticMean,
        gaussian(0.2),
        17,
    );
    let spec = constant(LinkName::LogisticMean);
    let base = procedure_one(&data, &spec, &FitOptions::default()).unwrap();

    let c = 3.5;
    let scaled = semiql::Dataset::new(data.x().clone(), data.y() * c).unwrap();
    let link = Link::custom(
        "scaled-logistic",
        move |t: f64| c / (1.0 + (-t).exp()),
        move |t: f64| {
            let s = 1.0 / (1.0 + (-t).exp());
            c * s * (1.0 - s)
        },
    );
    let scaled_spec = GlmSpec::new(link, VarianceSpec::Constant);
    let fit = procedure_one(&scaled, &scaled_spec, &FitOptions::default()).unwrap();
    let err = (&fit.gamma - &base.gamma).amax();
    assert!(err < 1e-6, "gamma moved by {err}");
}

#[test]
fn permuting_predictors_permutes_the_estimate() {
    let beta0 = [0.5, 1.5, -0.8, 0.3];
    let data = draw(
        400,
        Design::Ar1 { rho: 0.6 },
        &beta0,
        LinkName::LogisticMean,
        gaussian(0.2),
        18,
    );
    let spec = constant(LinkName::LogisticMean);
    let order = [2, 0, 3, 1];
    let permuted = data.permute_columns(&order);
    let options = FitOptions::default();
    for procedure in [Procedure::One, Procedure::Two] {
        let base = fit(&data, &spec, procedure, &options).unwrap();
        let moved = fit(&permuted, &spec, procedure, &options).unwrap();
        for (k, &j) in order.iter().enumerate() {
            let diff = (moved.beta[k] - base.beta[j]).abs();
            assert!(diff < 1e-8, "{procedure:?}, column {j}: {diff}");
        }
    }
}

#[test]
fn untrimmed_identity_first_stage_is_least_squares() {
    let beta0 = [1.0, -2.0, 0.5];
    let data = draw(
        250,
        Design::Ar1 { rho: 0.4 },
        &beta0,
        LinkName::Identity,
        gaussian(1.0),
        19,
    );
    let fit = procedure_one(&data, &constant(LinkName::Identity), &keep_all()).unwrap();

    // OLS with an intercept column, solved independently by SVD.
    let n = data.n();
    let design = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { data.x()[(i, j - 1)] });
    let coef = design.svd(true, true).solve(data.y(), 1e-14).unwrap();
    let ols = coef.rows(1, 3).into_owned();
    let err = (&fit.beta_initial - ols).amax();
    assert!(err < 1e-8, "first-stage error {err}");
}

#[test]
fn reestimated_scale_is_no_noisier_than_the_initial_one() {
    let design = common::design(
        400,
        Design::Ar1 { rho: 0.7 },
        &[1.5, 1.5, 1.5, 1.5],
        LinkName::LogisticMean,
        gaussian(0.3),
        2024,
    );
    let design = semiql::simulation::SimDesign {
        replications: 200,
        ..design
    };
    let summary = run_monte_carlo(
        &design,
        &[Estimator::Classical, Estimator::ProcedureTwo],
        &FitOptions::default(),
        true,
    )
    .unwrap();
    let paired = summary
        .get(Estimator::ProcedureTwo)
        .unwrap()
        .paired
        .clone()
        .unwrap();
    assert!(
        paired.var_scale <= paired.var_scale_classical + 2.0 * paired.var_scale_difference_se,
        "{paired:?}"
    );
}
