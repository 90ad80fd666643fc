mod common;

use common::{draw, fit_at, gaussian, relative_frobenius};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use semiql::asymptotics::{estimate_q1, estimate_v};
use semiql::reparam::jacobian;
use semiql::simulation::Design;
use semiql::smoother::{Exclude, LocalLinear};
use semiql::{
    asymptotic_report, procedure_one, spec_from_names, Dataset, FitOptions, GlmSpec, Kernel,
    LinkName, Q1Mode, SchemeKind, SmootherConfig, VarianceName,
};

fn constant(link: LinkName) -> GlmSpec {
    spec_from_names(link, VarianceName::Constant)
}

fn logistic_derivative(t: f64) -> f64 {
    let s = 1.0 / (1.0 + (-t).exp());
    s * (1.0 - s)
}

#[test]
fn information_matches_a_large_sample_oracle() {
    let beta0 = [1.0, 0.5, -0.5];
    let data = draw(
        2000,
        Design::SphericalNormal,
        &beta0,
        LinkName::LogisticMean,
        gaussian(0.2),
        31,
    );
    let beta = DVector::from_column_slice(&beta0);
    let v_hat = estimate_v(&data, &constant(LinkName::LogisticMean), &beta, None).unwrap();

    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let draws = 1_000_000;
    let mut oracle = DMatrix::<f64>::zeros(3, 3);
    let mut x = DVector::<f64>::zeros(3);
    for _ in 0..draws {
        for j in 0..3 {
            x[j] = rng.sample(StandardNormal);
        }
        let w = logistic_derivative(beta.dot(&x)).powi(2);
        oracle += &x * x.transpose() * w;
    }
    oracle /= draws as f64;
    let gap = relative_frobenius(&v_hat, &oracle);
    assert!(gap < 0.10, "relative gap {gap}");
}

#[test]
fn spherical_design_has_no_smoothing_gain() {
    let beta0 = [1.0, -0.5, 0.8, 0.3];
    let data = draw(
        2000,
        Design::SphericalNormal,
        &beta0,
        LinkName::LogisticMean,
        gaussian(0.3),
        32,
    );
    let spec = constant(LinkName::LogisticMean);
    let fit = procedure_one(&data, &spec, &FitOptions::default()).unwrap();
    let report = asymptotic_report(&data, &spec, &fit, Kernel::Epanechnikov).unwrap();
    let gap = relative_frobenius(&report.q1, &report.vtilde);
    assert!(gap < 0.10, "Q1 vs Vtilde gap {gap}");
    let aw = &report.a * &report.w * report.a.transpose();
    let gap = relative_frobenius(&aw, &report.v_inv);
    assert!(gap < 0.15, "A W A' vs V^-1 gap {gap}");
}

#[test]
fn spherical_trace_gap_is_small_in_large_samples() {
    let beta0 = [1.0, 1.0, -1.0, 0.5];
    let data = draw(
        4000,
        Design::SphericalNormal,
        &beta0,
        LinkName::LogisticMean,
        gaussian(0.3),
        33,
    );
    let spec = constant(LinkName::LogisticMean);
    let fit = procedure_one(&data, &spec, &FitOptions::default()).unwrap();
    let report = asymptotic_report(&data, &spec, &fit, Kernel::Epanechnikov).unwrap();
    let relative = report.comparison.trace_margin_w / report.v_inv.trace();
    assert!(
        (0.0..0.05).contains(&relative),
        "relative trace gap {relative}"
    );
}

#[test]
fn strongly_correlated_design_has_a_positive_gap() {
    let beta0 = [1.0, 1.0, 1.0, 1.0];
    let data = draw(
        1000,
        Design::Ar1 { rho: 0.9 },
        &beta0,
        LinkName::LogisticMean,
        gaussian(0.3),
        34,
    );
    let spec = constant(LinkName::LogisticMean);
    let fit = procedure_one(&data, &spec, &FitOptions::default()).unwrap();
    let report = asymptotic_report(&data, &spec, &fit, Kernel::Epanechnikov).unwrap();
    let relative = report.comparison.trace_margin_w / report.v_inv.trace();
    assert!(report.comparison.holds());
    assert!(relative > 1e-3, "relative trace gap {relative}");
}

#[test]
fn duplicated_predictor_collapses_q1() {
    let mut rng = ChaCha20Rng::seed_from_u64(35);
    let n = 1000;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            vec![x, x]
        })
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| {
            1.0 / (1.0 + (-(r[0] + 0.5 * r[1])).exp()) + 0.1 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let data = Dataset::from_rows(&rows, y).unwrap();
    let spec = constant(LinkName::LogisticMean);
    let smoother = SmootherConfig::default();
    let fit = fit_at(
        &data,
        &[1.0, 0.5],
        SchemeKind::RemoveOneComponent,
        &smoother,
    );
    let q1 = estimate_q1(&data, &spec, &fit, smoother.kernel, Q1Mode::PopulationForm).unwrap();
    let centered = data.shifted(&fit.center);
    let jac = jacobian(&fit.scheme, &fit.theta).unwrap();
    let mut vtilde = 0.0;
    let mut used = 0;
    for i in 0..n {
        if fit.trim_mask[i] {
            let x = centered.x().row(i).transpose();
            let d = logistic_derivative(fit.beta.dot(&x));
            vtilde += (d * jac.tr_mul(&x)[0]).powi(2);
            used += 1;
        }
    }
    vtilde /= used as f64;
    assert!(
        q1[(0, 0)] < 0.05 * vtilde,
        "Q1 {} vs Vtilde {vtilde}",
        q1[(0, 0)]
    );
}

/// `avg_U J'(x - l)(x - l)'J` with each row weighted by `weight(i)`, for v = 1 and g' = 1.
fn residualized_average(
    data: &Dataset,
    fit: &semiql::FitResult,
    weight: impl Fn(usize, f64, &LocalLinear) -> f64,
) -> DMatrix<f64> {
    let centered = data.shifted(&fit.center);
    let index: Vec<f64> = (centered.x() * &fit.gamma).iter().copied().collect();
    let smoother = LocalLinear::new(&index, fit.bandwidth, Kernel::Epanechnikov).unwrap();
    let l_hat = smoother
        .fit_at_samples(centered.x(), true, Some(&fit.trim_mask))
        .unwrap()
        .mean;
    let jac = jacobian(&fit.scheme, &fit.theta).unwrap();
    let m = jac.ncols();
    let mut acc = DMatrix::<f64>::zeros(m, m);
    let mut used = 0;
    for (i, &z) in index.iter().enumerate() {
        if fit.trim_mask[i] {
            let proj = jac.tr_mul(&(centered.x().row(i) - l_hat.row(i)).transpose());
            acc += &proj * proj.transpose() * weight(i, z, &smoother);
            used += 1;
        }
    }
    acc / used as f64
}

#[test]
fn population_and_sandwich_forms_agree_with_unit_residuals() {
    // Rademacher errors: the squared error equals the unit variance. With an
    // identity link the local linear fit of the mean has no bias, so the
    // leave-one-out residual is e_i - sum_j w_ij e_j and its expected square is
    // 1 + sum_j w_ij^2. The sandwich must match that conditional mean. What is
    // left over against the population form is of order 1/(nh): the residual
    // inflation plus the sample cross terms of l_hat.
    let beta0 = [1.0, 0.6, -0.4];
    let spec = constant(LinkName::Identity);
    let smoother = SmootherConfig::default();
    let reps = 40;
    let (raw, adjusted): (Vec<f64>, Vec<f64>) = (0..reps)
        .map(|r| {
            let clean = draw(
                1000,
                Design::Ar1 { rho: 0.5 },
                &beta0,
                LinkName::Identity,
                gaussian(0.0),
                400 + r,
            );
            let mut rng = ChaCha20Rng::seed_from_u64(900 + r);
            let y = clean
                .y()
                .map(|v| v + if rng.random::<bool>() { 1.0 } else { -1.0 });
            let data = Dataset::new(clean.x().clone(), y).unwrap();
            let fit = fit_at(&data, &beta0, SchemeKind::RemoveOneComponent, &smoother);
            let pop =
                estimate_q1(&data, &spec, &fit, smoother.kernel, Q1Mode::PopulationForm).unwrap();
            let sand = estimate_q1(&data, &spec, &fit, smoother.kernel, Q1Mode::Sandwich).unwrap();
            let unit = residualized_average(&data, &fit, |_, _, _| 1.0);
            let inflation = residualized_average(&data, &fit, |i, z, s| {
                s.weights(z, Exclude::Row(i))
                    .unwrap()
                    .mean
                    .iter()
                    .map(|w| w * w)
                    .sum()
            });
            assert!(((unit.trace() - pop.trace()) / pop.trace()).abs() < 0.05);
            (
                (sand.trace() - pop.trace()) / pop.trace(),
                (sand.trace() - inflation.trace() - unit.trace()) / pop.trace(),
            )
        })
        .unzip();
    let (mean, se) = mean_and_se(&adjusted);
    assert!(
        mean.abs() < 2.0 * se,
        "sandwich vs its conditional mean: {mean}, standard error {se}"
    );
    let (mean, _) = mean_and_se(&raw);
    assert!(
        (0.0..0.05).contains(&mean),
        "sandwich vs population form: {mean}"
    );
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn report_blocks_are_symmetric_and_the_gap_is_psd() {
    for (k, design) in [
        Design::SphericalNormal,
        Design::Ar1 { rho: 0.7 },
        Design::UniformCube,
    ]
    .into_iter()
    .enumerate()
    {
        let beta0 = [1.5, -1.0, 0.5, 1.0];
        let data = draw(
            600,
            design,
            &beta0,
            LinkName::LogisticMean,
            gaussian(0.3),
            36 + k as u64,
        );
        let spec = constant(LinkName::LogisticMean);
        let fit = procedure_one(&data, &spec, &FitOptions::default()).unwrap();
        let report = asymptotic_report(&data, &spec, &fit, Kernel::Epanechnikov).unwrap();
        assert!(report.is_symmetric(1e-10));
        for m in [
            &report.cov_beta_classical,
            &report.cov_beta_proc1,
            &report.cov_beta_proc2,
            &report.cov_gamma,
        ] {
            assert!(m.diagonal().iter().all(|&d| d >= 0.0));
        }
        assert!(report.cov_gap_min_eigenvalue >= -1e-10);
        assert!(report.w[(0, 0)] - report.w1[(0, 0)] >= -1e-10);
        assert!(report.comparison.holds(), "{:?}", report.comparison);
    }
}

#[test]
fn gap_matches_an_independent_projection_average() {
    let beta0 = [1.0, 0.7, -0.6];
    let data = draw(
        800,
        Design::Ar1 { rho: 0.6 },
        &beta0,
        LinkName::LogisticMean,
        gaussian(0.3),
        37,
    );
    let spec = constant(LinkName::LogisticMean);
    let fit = procedure_one(&data, &spec, &FitOptions::default()).unwrap();
    let report = asymptotic_report(&data, &spec, &fit, Kernel::Epanechnikov).unwrap();

    // Vtilde - Q1 = avg g'^2 J' l l' J, with l the leave-one-out smooth of x on the index.
    let centered = data.shifted(&fit.center);
    let index: Vec<f64> = (centered.x() * &fit.gamma).iter().copied().collect();
    let smooth = LocalLinear::new(&index, fit.bandwidth, Kernel::Epanechnikov)
        .unwrap()
        .fit_at_samples(centered.x(), true, Some(&fit.trim_mask))
        .unwrap();
    let jac = jacobian(&fit.scheme, &fit.theta).unwrap();
    let mut gap = DMatrix::<f64>::zeros(2, 2);
    let mut used = 0;
    for (i, &z) in index.iter().enumerate() {
        if !fit.trim_mask[i] {
            continue;
        }
        let d = logistic_derivative(fit.alpha * z);
        let proj = jac.tr_mul(&smooth.mean.row(i).transpose());
        gap += &proj * proj.transpose() * (d * d);
        used += 1;
    }
    gap /= used as f64;
    let identity = &report.vtilde - &report.q1;
    assert!((identity - &gap).amax() < 1e-10);
    assert!((&report.cov_gap - gap).amax() < 1e-10);
}
