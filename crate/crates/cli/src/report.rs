//! Versioned JSON reports and their CSV counterparts.

use nalgebra::{DMatrix, DVector};
use semiql::estimators::StageDiagnostics;
use semiql::simulation::{EstimatorSummary, MonteCarloSummary};
use semiql::{AsymptoticReport, FitResult, TraceComparison};
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::data::Table;

pub const SCHEMA: &str = "semiql.report/1";

pub fn generator() -> String {
    format!("semiql-cli {}", env!("CARGO_PKG_VERSION"))
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn std_errors(cov: &DMatrix<f64>) -> Vec<f64> {
    cov.diagonal().iter().map(|d| d.max(0.0).sqrt()).collect()
}

#[derive(Debug, Serialize)]
pub struct Report<'a, B: Serialize> {
    pub schema: &'static str,
    pub generator: String,
    pub mode: Mode,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub body: B,
}

impl<'a, B: Serialize> Report<'a, B> {
    pub fn new(mode: Mode, config: &'a RunConfig, body: B, error: Option<ErrorInfo>) -> Self {
        Self {
            schema: SCHEMA,
            generator: generator(),
            mode,
            status: if error.is_some() {
                Status::Failed
            } else {
                Status::Ok
            },
            error,
            config,
            body,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorInfo {
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<StageDiagnostics>,
}

impl From<&semiql::Error> for ErrorInfo {
    fn from(e: &semiql::Error) -> Self {
        Self {
            message: e.to_string(),
            diagnostics: match e {
                semiql::Error::NoConvergence(d) => Some((**d).clone()),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DataInfo {
    pub n: usize,
    pub p: usize,
    pub predictors: Vec<String>,
    pub response: String,
}

impl DataInfo {
    pub fn new(table: &Table) -> Self {
        Self {
            n: table.dataset.n(),
            p: table.dataset.p(),
            predictors: table.predictors.clone(),
            response: table.response.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FitBlock {
    pub procedure: semiql::Procedure,
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub scheme: semiql::ReparamScheme,
    pub beta_initial: Vec<f64>,
    pub alpha_initial: f64,
    pub bandwidth: f64,
    pub trimmed_count: usize,
    pub center: Vec<f64>,
    pub stages: Vec<StageDiagnostics>,
}

impl FitBlock {
    pub fn new(fit: &FitResult) -> Self {
        Self {
            procedure: fit.procedure,
            beta: vec(&fit.beta),
            alpha: fit.alpha,
            gamma: vec(&fit.gamma),
            theta: vec(&fit.theta),
            scheme: fit.scheme,
            beta_initial: vec(&fit.beta_initial),
            alpha_initial: fit.alpha_initial,
            bandwidth: fit.bandwidth,
            trimmed_count: fit.trimmed_count,
            center: fit.center.clone(),
            stages: fit.stages.clone(),
        }
    }
}

/// Plug-in matrices shared by every estimator on one dataset.
#[derive(Debug, Serialize)]
pub struct AsymptoticsBlock {
    pub n_used: usize,
    pub v_hat: Vec<Vec<f64>>,
    pub v_condition: f64,
    pub a: Vec<Vec<f64>>,
    pub vtilde: Vec<Vec<f64>>,
    pub q1: Vec<Vec<f64>>,
    pub q1_sandwich: Vec<Vec<f64>>,
    pub cov_gap_min_eigenvalue: f64,
    pub w: Vec<Vec<f64>>,
    pub w1: Vec<Vec<f64>>,
    pub cov_gamma: Vec<Vec<f64>>,
    pub cov_gamma_classical: Vec<Vec<f64>>,
    pub comparison: TraceComparison,
}

impl AsymptoticsBlock {
    pub fn new(r: &AsymptoticReport) -> Self {
        Self {
            n_used: r.n_used,
            v_hat: rows(&r.v_hat),
            v_condition: r.v_condition,
            a: rows(&r.a),
            vtilde: rows(&r.vtilde),
            q1: rows(&r.q1),
            q1_sandwich: rows(&r.q1_sandwich),
            cov_gap_min_eigenvalue: r.cov_gap_min_eigenvalue,
            w: rows(&r.w),
            w1: rows(&r.w1),
            cov_gamma: rows(&r.cov_gamma),
            cov_gamma_classical: rows(&r.cov_gamma_classical),
            comparison: r.comparison.clone(),
        }
    }
}

/// Coefficients of one estimator with their plug-in covariance.
#[derive(Debug, Serialize)]
pub struct EstimateBlock {
    pub estimator: &'static str,
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub cov_beta: Vec<Vec<f64>>,
    /// Covariance with the sandwich `Q1`; absent for the classical estimator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov_beta_sandwich: Option<Vec<Vec<f64>>>,
}

impl EstimateBlock {
    pub fn new(
        estimator: &'static str,
        beta: &DVector<f64>,
        cov: &DMatrix<f64>,
        sandwich: Option<&DMatrix<f64>>,
    ) -> Self {
        Self {
            estimator,
            beta: vec(beta),
            std_errors: std_errors(cov),
            cov_beta: rows(cov),
            cov_beta_sandwich: sandwich.map(rows),
        }
    }

    pub fn classical(beta: &DVector<f64>, r: &AsymptoticReport) -> Self {
        Self::new("classical", beta, &r.cov_beta_classical, None)
    }

    pub fn procedure(fit: &FitResult, r: &AsymptoticReport) -> Self {
        match fit.procedure {
            semiql::Procedure::One => Self::new(
                "procedure-one",
                &fit.beta,
                &r.cov_beta_proc1,
                Some(&r.cov_beta_proc1_sandwich),
            ),
            semiql::Procedure::Two => Self::new(
                "procedure-two",
                &fit.beta,
                &r.cov_beta_proc2,
                Some(&r.cov_beta_proc2_sandwich),
            ),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FitBody {
    pub data: DataInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotics: Option<AsymptoticsBlock>,
}

#[derive(Debug, Serialize)]
pub struct CompareBody {
    pub data: DataInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitBlock>,
    pub estimators: Vec<EstimatorEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotics: Option<AsymptoticsBlock>,
}

/// An estimator block, or the reason it is missing.
#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum EstimatorEntry {
    Estimate(EstimateBlock),
    Failed {
        estimator: &'static str,
        error: ErrorInfo,
    },
}

#[derive(Debug, Serialize)]
pub struct SimulateBody<'a> {
    pub summary: &'a MonteCarloSummary,
}

/// `estimator,coefficient,estimate,std_error` rows.
pub fn coefficients_csv(names: &[String], blocks: &[&EstimateBlock]) -> String {
    let mut out = String::from("estimator,coefficient,estimate,std_error\n");
    for b in blocks {
        for (j, name) in names.iter().enumerate() {
            out += &format!(
                "{},{},{},{}\n",
                b.estimator, name, b.beta[j], b.std_errors[j]
            );
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// One row per estimator. Fields that need at least two successful replicates are `NA`.
pub fn simulation_csv(summary: &MonteCarloSummary) -> String {
    let p = summary.design.p;
    let mut header: Vec<String> = ["estimator", "replications", "successes", "failures"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..p).map(|j| format!("mean_beta_{j}")));
    header.extend(
        [
            "trace_cov_beta",
            "trace_cov_direction",
            "var_scale",
            "median_error",
            "trace_ratio_vs_classical",
            "trace_difference_vs_classical",
            "trace_difference_se",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let mut out = header.join(",") + "\n";
    for s in &summary.estimators {
        out += &summary_row(s, summary.replications, p).join(",");
        out.push('\n');
    }
    out
}

fn summary_row(s: &EstimatorSummary, replications: usize, p: usize) -> Vec<String> {
    let mut row = vec![
        s.estimator.name().to_string(),
        replications.to_string(),
        s.successes.to_string(),
        s.failures.to_string(),
    ];
    row.extend((0..p).map(|j| opt(s.mean_beta.get(j).copied().filter(|v| v.is_finite()))));
    let paired = s.paired.as_ref();
    row.extend([
        opt(s.trace_cov_beta),
        opt(s.trace_cov_direction),
        opt(s.var_scale),
        opt(s.median_error),
        opt(paired.map(|c| c.trace_ratio)),
        opt(paired.map(|c| c.trace_difference)),
        opt(paired.map(|c| c.trace_difference_se)),
    ]);
    row
}
