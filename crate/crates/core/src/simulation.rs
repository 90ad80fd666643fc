//! Simulated designs and a Monte Carlo harness comparing the estimators.
//!
//! Replicate `r` draws from a ChaCha20 stream seeded with `seed` and stream
//! number `r`, so results do not depend on scheduling. Summaries are always
//! aggregated in replicate order.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, fit_classical_ql, FitOptions, Init};
use crate::model::{spec_from_names, Dataset, GlmSpec, LinkName, VarianceName};

/// Largest tolerated share of failed replicates per estimator.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Design {
    /// Independent standard normal predictors.
    SphericalNormal,
    /// Stationary Gaussian AR(1) across predictor columns with unit variance.
    Ar1 { rho: f64 },
    /// Independent uniforms on `[-sqrt 3, sqrt 3]` (unit variance).
    UniformCube,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Noise {
    GaussianHomoscedastic {
        sigma: f64,
    },
    /// Gaussian errors with variance `sigma^2 exp(slope * beta0'x)`.
    GaussianIndexVariance {
        sigma: f64,
        slope: f64,
    },
    /// `Y ~ Bernoulli(g(beta0'x))`; needs a mean in `[0, 1]`.
    #[serde(alias = "logistic")]
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n: usize,
    pub p: usize,
    pub design: Design,
    pub beta0: Vec<f64>,
    pub link: LinkName,
    /// Variance specification handed to the estimators.
    #[serde(default)]
    pub variance: VarianceName,
    pub noise: Noise,
    pub replications: usize,
    pub seed: u64,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.p == 0 || self.beta0.len() != self.p {
            return bad(format!(
                "beta0 has {} entries for p = {}",
                self.beta0.len(),
                self.p
            ));
        }
        if self.n < self.p + 2 {
            return bad(format!("n = {} is too small for p = {}", self.n, self.p));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.beta0.iter().any(|b| !b.is_finite()) {
            return bad("beta0 must be finite".into());
        }
        if let Design::Ar1 { rho } = self.design {
            if !(rho > -1.0 && rho < 1.0) {
                return bad(format!("AR(1) coefficient {rho} outside (-1, 1)"));
            }
        }
        match self.noise {
            Noise::GaussianHomoscedastic { sigma } | Noise::GaussianIndexVariance { sigma, .. }
                if !(sigma >= 0.0 && sigma.is_finite()) =>
            {
                bad(format!("noise scale {sigma} must be nonnegative"))
            }
            Noise::Bernoulli if self.link != LinkName::LogisticMean => {
                bad("Bernoulli responses need the logistic-mean link".into())
            }
            _ => Ok(()),
        }
    }

    pub fn spec(&self) -> GlmSpec {
        spec_from_names(self.link, self.variance)
    }
}

/// Draws replicate `replicate` of the design.
pub fn generate(design: &SimDesign, replicate: u64) -> Result<Dataset> {
    design.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(design.seed);
    rng.set_stream(replicate);
    let (n, p) = (design.n, design.p);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        match design.design {
            Design::SphericalNormal => {
                for j in 0..p {
                    x[(i, j)] = rng.sample(StandardNormal);
                }
            }
            Design::Ar1 { rho } => {
                let innovation = (1.0 - rho * rho).sqrt();
                x[(i, 0)] = rng.sample(StandardNormal);
                for j in 1..p {
                    let e: f64 = rng.sample(StandardNormal);
                    x[(i, j)] = rho * x[(i, j - 1)] + innovation * e;
                }
            }
            Design::UniformCube => {
                let half = 3f64.sqrt();
                for j in 0..p {
                    x[(i, j)] = rng.random_range(-half..half);
                }
            }
        }
    }
    let link = design.link.link();
    let beta0 = DVector::from_column_slice(&design.beta0);
    let index = &x * &beta0;
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mean = link.mean(index[i]);
        y[i] = match design.noise {
            Noise::GaussianHomoscedastic { sigma } => {
                let e: f64 = rng.sample(StandardNormal);
                mean + sigma * e
            }
            Noise::GaussianIndexVariance { sigma, slope } => {
                let e: f64 = rng.sample(StandardNormal);
                mean + sigma * (0.5 * slope * index[i]).exp() * e
            }
            Noise::Bernoulli => {
                let draw = Bernoulli::new(mean.clamp(0.0, 1.0)).expect("probability in [0, 1]");
                if draw.sample(&mut rng) {
                    1.0
                } else {
                    0.0
                }
            }
        };
    }
    Dataset::new(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Classical,
    ProcedureOne,
    ProcedureTwo,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [
        Estimator::Classical,
        Estimator::ProcedureOne,
        Estimator::ProcedureTwo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Classical => "classical",
            Estimator::ProcedureOne => "procedure-one",
            Estimator::ProcedureTwo => "procedure-two",
        }
    }
}

/// Coefficient estimates of one replicate, per requested estimator.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub estimates: Vec<std::result::Result<DVector<f64>, String>>,
}

fn failure_kind(err: &Error) -> String {
    let kind = match err {
        Error::NoConvergence(_) => "no-convergence",
        Error::DegenerateWindow { .. } => "degenerate-window",
        Error::AllTrimmed => "all-trimmed",
        Error::BoundaryStall(_) => "boundary-stall",
        Error::NoBracket { .. } => "no-bracket",
        Error::SingularJacobian(_) => "singular-jacobian",
        Error::SingularV { .. } => "singular-v",
        _ => "other",
    };
    kind.to_string()
}

/// Fits every requested estimator on one replicate.
pub fn run_replicate(
    design: &SimDesign,
    replicate: usize,
    estimators: &[Estimator],
    options: &FitOptions,
) -> Result<ReplicateOutcome> {
    let dataset = generate(design, replicate as u64)?;
    let spec = design.spec();
    let wants_two_stage = estimators.iter().any(|e| *e != Estimator::Classical);
    let two_stage = wants_two_stage.then(|| estimators::fit_both(&dataset, &spec, options));
    let estimates = estimators
        .iter()
        .map(|est| match est {
            Estimator::Classical => {
                let (centered, _) = dataset.centered();
                fit_classical_ql(
                    &centered,
                    &spec,
                    &Init::Auto,
                    &options.smoother,
                    &options.solver,
                )
                .map(|f| f.beta)
                .map_err(|e| failure_kind(&e))
            }
            Estimator::ProcedureOne => match two_stage.as_ref().unwrap() {
                Ok((one, _)) => Ok(one.beta.clone()),
                Err(e) => Err(failure_kind(e)),
            },
            Estimator::ProcedureTwo => match two_stage.as_ref().unwrap() {
                Ok((_, Ok(two))) => Ok(two.beta.clone()),
                Ok((_, Err(e))) | Err(e) => Err(failure_kind(e)),
            },
        })
        .collect();
    Ok(ReplicateOutcome {
        replicate,
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub successes: usize,
    pub failures: usize,
    pub failure_kinds: BTreeMap<String, usize>,
    pub mean_beta: Vec<f64>,
    /// Empirical covariance of the coefficients; `None` below two successes.
    pub cov_beta: Option<Vec<Vec<f64>>>,
    pub trace_cov_beta: Option<f64>,
    /// Mean of `beta / |beta|`.
    pub mean_direction: Vec<f64>,
    pub cov_direction: Option<Vec<Vec<f64>>>,
    pub trace_cov_direction: Option<f64>,
    /// Empirical variance of the signed norm `sign(beta'beta0) |beta|`.
    pub var_scale: Option<f64>,
    pub median_error: Option<f64>,
    /// Paired comparison with the classical estimator on replicates where both succeeded.
    pub paired: Option<PairedComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub replicates: usize,
    /// Direction covariance traces on the paired replicates.
    pub trace_direction: f64,
    pub trace_direction_classical: f64,
    /// `trace_direction / trace_direction_classical`.
    pub trace_ratio: f64,
    /// `trace_direction_classical - trace_direction`.
    pub trace_difference: f64,
    /// Monte Carlo standard error of `trace_difference`.
    pub trace_difference_se: f64,
    pub var_scale: f64,
    pub var_scale_classical: f64,
    /// Monte Carlo standard error of `var_scale_classical - var_scale`.
    pub var_scale_difference_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub design: SimDesign,
    pub replications: usize,
    pub estimators: Vec<EstimatorSummary>,
}

impl MonteCarloSummary {
    pub fn get(&self, estimator: Estimator) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == estimator)
    }
}

fn mean_of(rows: &[DVector<f64>]) -> DVector<f64> {
    let p = rows.first().map_or(0, |r| r.len());
    let mut acc = DVector::zeros(p);
    for r in rows {
        acc += r;
    }
    acc / rows.len().max(1) as f64
}

fn covariance(rows: &[DVector<f64>]) -> Option<DMatrix<f64>> {
    if rows.len() < 2 {
        return None;
    }
    let mean = mean_of(rows);
    let p = mean.len();
    let mut acc = DMatrix::zeros(p, p);
    for r in rows {
        let d = r - &mean;
        acc += &d * d.transpose();
    }
    Some(acc / (rows.len() - 1) as f64)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn direction(beta: &DVector<f64>) -> DVector<f64> {
    let norm = beta.norm();
    if norm > 0.0 {
        beta / norm
    } else {
        beta.clone()
    }
}

fn signed_scale(beta: &DVector<f64>, beta0: &DVector<f64>) -> f64 {
    let s = if beta.dot(beta0) < 0.0 { -1.0 } else { 1.0 };
    s * beta.norm()
}

fn variance(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
}

/// Mean and Monte Carlo standard error of a paired difference of sample
/// variance-like sums `sum |a_r - a_bar|^2 - sum |b_r - b_bar|^2`, per replicate.
fn paired_difference(classical: &[DVector<f64>], other: &[DVector<f64>]) -> (f64, f64) {
    let m = classical.len() as f64;
    let (ca, oa) = (mean_of(classical), mean_of(other));
    let terms: Vec<f64> = classical
        .iter()
        .zip(other)
        .map(|(c, o)| ((c - &ca).norm_squared() - (o - &oa).norm_squared()) * m / (m - 1.0))
        .collect();
    let mean = terms.iter().sum::<f64>() / m;
    let se = (variance(&terms) / m).sqrt();
    (mean, se)
}

fn summarize(
    estimator: Estimator,
    outcomes: &[std::result::Result<DVector<f64>, String>],
    classical: Option<&[std::result::Result<DVector<f64>, String>]>,
    beta0: &DVector<f64>,
) -> EstimatorSummary {
    let ok: Vec<DVector<f64>> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok().cloned())
        .collect();
    let mut failure_kinds = BTreeMap::new();
    for o in outcomes {
        if let Err(kind) = o {
            *failure_kinds.entry(kind.clone()).or_insert(0) += 1;
        }
    }
    let directions: Vec<DVector<f64>> = ok.iter().map(direction).collect();
    let scales: Vec<f64> = ok.iter().map(|b| signed_scale(b, beta0)).collect();
    let mut errors: Vec<f64> = ok.iter().map(|b| (b - beta0).norm()).collect();
    errors.sort_by(f64::total_cmp);
    let median_error = (!errors.is_empty()).then(|| {
        let k = errors.len();
        if k % 2 == 1 {
            errors[k / 2]
        } else {
            0.5 * (errors[k / 2 - 1] + errors[k / 2])
        }
    });
    let cov_beta = covariance(&ok);
    let cov_direction = covariance(&directions);

    let paired = classical.and_then(|classical| {
        let pairs: Vec<(DVector<f64>, DVector<f64>)> = classical
            .iter()
            .zip(outcomes)
            .filter_map(|(c, o)| match (c, o) {
                (Ok(c), Ok(o)) => Some((c.clone(), o.clone())),
                _ => None,
            })
            .collect();
        if pairs.len() < 3 {
            return None;
        }
        let cd: Vec<DVector<f64>> = pairs.iter().map(|(c, _)| direction(c)).collect();
        let od: Vec<DVector<f64>> = pairs.iter().map(|(_, o)| direction(o)).collect();
        let trace_c = covariance(&cd)?.trace();
        let trace_o = covariance(&od)?.trace();
        let (trace_difference, trace_difference_se) = paired_difference(&cd, &od);
        let cs: Vec<DVector<f64>> = pairs
            .iter()
            .map(|(c, _)| DVector::from_element(1, signed_scale(c, beta0)))
            .collect();
        let os: Vec<DVector<f64>> = pairs
            .iter()
            .map(|(_, o)| DVector::from_element(1, signed_scale(o, beta0)))
            .collect();
        let (_, var_scale_difference_se) = paired_difference(&cs, &os);
        Some(PairedComparison {
            replicates: pairs.len(),
            trace_direction: trace_o,
            trace_direction_classical: trace_c,
            trace_ratio: trace_o / trace_c,
            trace_difference,
            trace_difference_se,
            var_scale: covariance(&os)?[(0, 0)],
            var_scale_classical: covariance(&cs)?[(0, 0)],
            var_scale_difference_se,
        })
    });

    EstimatorSummary {
        estimator,
        successes: ok.len(),
        failures: outcomes.len() - ok.len(),
        failure_kinds,
        mean_beta: mean_of(&ok).iter().copied().collect(),
        trace_cov_beta: cov_beta.as_ref().map(|c| c.trace()),
        cov_beta: cov_beta.as_ref().map(to_rows),
        mean_direction: mean_of(&directions).iter().copied().collect(),
        trace_cov_direction: cov_direction.as_ref().map(|c| c.trace()),
        cov_direction: cov_direction.as_ref().map(to_rows),
        var_scale: (scales.len() >= 2).then(|| variance(&scales)),
        median_error,
        paired,
    }
}

/// Runs every replicate of the design and summarizes each estimator.
///
/// Failed fits are excluded from the summaries and counted; more than
/// [`MAX_FAILURE_RATE`] failures for any estimator is an error.
pub fn run_monte_carlo(
    design: &SimDesign,
    estimators: &[Estimator],
    options: &FitOptions,
    parallel: bool,
) -> Result<MonteCarloSummary> {
    design.validate()?;
    if estimators.is_empty() {
        return Err(Error::InvalidConfig("no estimators requested".into()));
    }
    let run = |r: usize| run_replicate(design, r, estimators, options);
    let outcomes: Vec<ReplicateOutcome> = if parallel {
        (0..design.replications)
            .into_par_iter()
            .map(run)
            .collect::<Result<_>>()?
    } else {
        (0..design.replications).map(run).collect::<Result<_>>()?
    };

    let per_estimator: Vec<Vec<std::result::Result<DVector<f64>, String>>> = (0..estimators.len())
        .map(|k| outcomes.iter().map(|o| o.estimates[k].clone()).collect())
        .collect();
    let classical_pos = estimators.iter().position(|e| *e == Estimator::Classical);
    let beta0 = DVector::from_column_slice(&design.beta0);
    let summaries: Vec<EstimatorSummary> = estimators
        .iter()
        .enumerate()
        .map(|(k, &est)| {
            let classical = classical_pos
                .filter(|&c| c != k)
                .map(|c| per_estimator[c].as_slice());
            summarize(est, &per_estimator[k], classical, &beta0)
        })
        .collect();

    for s in &summaries {
        if s.failures as f64 > MAX_FAILURE_RATE * design.replications as f64 {
            return Err(Error::TooManyFailures {
                failed: s.failures,
                total: design.replications,
            });
        }
    }
    Ok(MonteCarloSummary {
        design: design.clone(),
        replications: design.replications,
        estimators: summaries,
    })
}
