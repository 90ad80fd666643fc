#![allow(dead_code)]

use nalgebra::DVector;
use semiql::reparam::{select_pivot, theta_from_gamma};
use semiql::simulation::{generate, Design, Noise, SimDesign};
use semiql::smoother::trimming_indicator;
use semiql::{
    Dataset, FitResult, LinkName, Procedure, ReparamScheme, SchemeKind, SmootherConfig,
    VarianceName,
};

pub fn design(
    n: usize,
    design: Design,
    beta0: &[f64],
    link: LinkName,
    noise: Noise,
    seed: u64,
) -> SimDesign {
    SimDesign {
        n,
        p: beta0.len(),
        design,
        beta0: beta0.to_vec(),
        link,
        variance: VarianceName::Constant,
        noise,
        replications: 1,
        seed,
    }
}

pub fn draw(
    n: usize,
    kind: Design,
    beta0: &[f64],
    link: LinkName,
    noise: Noise,
    seed: u64,
) -> Dataset {
    generate(&design(n, kind, beta0, link, noise, seed), 0).unwrap()
}

pub fn noiseless() -> Noise {
    Noise::GaussianHomoscedastic { sigma: 0.0 }
}

pub fn gaussian(sigma: f64) -> Noise {
    Noise::GaussianHomoscedastic { sigma }
}

/// A fit pinned at a given coefficient vector, with trimming and bandwidth
/// computed as the procedures would at that direction.
pub fn fit_at(
    dataset: &Dataset,
    beta: &[f64],
    kind: SchemeKind,
    smoother: &SmootherConfig,
) -> FitResult {
    let beta = DVector::from_column_slice(beta);
    let norm = beta.norm();
    let (pivot, sign) = select_pivot(&(&beta / norm));
    let gamma = &beta * (sign / norm);
    let scheme = ReparamScheme::new(kind, pivot, beta.len()).unwrap();
    let theta = theta_from_gamma(&scheme, &gamma).unwrap();
    let (centered, center) = dataset.centered();
    let index: Vec<f64> = (centered.x() * &gamma).iter().copied().collect();
    let bandwidth = smoother.resolve_bandwidth(&index).unwrap();
    let trim = trimming_indicator(&index, smoother).unwrap();
    FitResult {
        procedure: Procedure::One,
        beta: beta.clone(),
        alpha: sign * norm,
        gamma,
        theta,
        scheme,
        beta_initial: beta,
        alpha_initial: sign * norm,
        stages: Vec::new(),
        trim_mask: trim.mask,
        trimmed_count: trim.trimmed,
        bandwidth,
        center,
        estimated_variance: None,
    }
}

pub fn relative_frobenius(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
