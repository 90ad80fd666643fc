//! Data, model specification and fit results shared by every estimator.
//!
//! The regression model is `Y = g(beta' X) + eps` with `E(eps | X) = 0`, a known
//! mean function `g` and a conditional variance described by [`VarianceSpec`].
//! There is no intercept: estimators center the predictor columns first and
//! record the offsets in the fit.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::StageDiagnostics;
use crate::reparam::ReparamScheme;

/// Lower bound applied to every evaluated variance.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// `n` observations of `p` predictors and a scalar response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows but the response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset from row-major predictor rows.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} predictors, expected {p}",
                rows[bad].len()
            )));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(x, DVector::from_vec(y))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n().max(1) as f64;
        self.x.column_iter().map(|c| c.sum() / n).collect()
    }

    /// Returns the dataset with every predictor column shifted to mean zero,
    /// together with the subtracted means.
    pub fn centered(&self) -> (Dataset, Vec<f64>) {
        let means = self.column_means();
        (self.shifted(&means), means)
    }

    /// Subtracts the given per-column offsets from the predictors.
    pub fn shifted(&self, offsets: &[f64]) -> Dataset {
        let mut x = self.x.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(-offsets[j]);
        }
        Dataset {
            x,
            y: self.y.clone(),
        }
    }

    /// Permutes predictor columns: column `j` of the result is column `order[j]` of `self`.
    pub fn permute_columns(&self, order: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(self.n(), self.p(), |i, j| self.x[(i, order[j])]);
        Dataset {
            x,
            y: self.y.clone(),
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type RowFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Mean function `g` of the single index together with its derivative.
#[derive(Clone)]
pub enum Link {
    Identity,
    Exp,
    /// `g(t) = 1 / (1 + exp(-t))`.
    LogisticMean,
    Custom {
        name: String,
        mean: ScalarFn,
        derivative: ScalarFn,
    },
}

impl Link {
    pub fn custom(
        name: impl Into<String>,
        mean: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Link::Custom {
            name: name.into(),
            mean: Arc::new(mean),
            derivative: Arc::new(derivative),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Link::Identity => "identity",
            Link::Exp => "exp",
            Link::LogisticMean => "logistic-mean",
            Link::Custom { name, .. } => name,
        }
    }

    #[inline]
    pub fn mean(&self, t: f64) -> f64 {
        match self {
            Link::Identity => t,
            Link::Exp => t.exp(),
            Link::LogisticMean => {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
            Link::Custom { mean, .. } => mean(t),
        }
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Exp => t.exp(),
            Link::LogisticMean => {
                let e = (-t.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            Link::Custom { derivative, .. } => derivative(t),
        }
    }
}

impl fmt::Debug for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Link({})", self.name())
    }
}

/// Conditional variance `var(Y | X)` used to weight the estimating equations.
#[derive(Clone)]
pub enum VarianceSpec {
    /// `v = 1`; any dispersion constant cancels from the equations.
    Constant,
    /// A known function of the predictor row.
    GivenOfX(RowFn),
    /// A known function of the index `beta' x`, re-evaluated at the current iterate.
    GivenOfIndex(ScalarFn),
    /// An unknown function of the index, estimated by smoothing squared residuals
    /// of an unweighted initial fit.
    UnknownOfIndex,
    /// Per-observation variances, in row order. Estimators produce this variant
    /// when they resolve [`VarianceSpec::UnknownOfIndex`].
    PerObservation(Arc<[f64]>),
}

impl VarianceSpec {
    pub fn of_x(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        VarianceSpec::GivenOfX(Arc::new(f))
    }

    pub fn of_index(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        VarianceSpec::GivenOfIndex(Arc::new(f))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            VarianceSpec::Constant => "constant",
            VarianceSpec::GivenOfX(_) => "given-of-x",
            VarianceSpec::GivenOfIndex(_) => "given-of-index",
            VarianceSpec::UnknownOfIndex => "unknown-of-index",
            VarianceSpec::PerObservation(_) => "per-observation",
        }
    }

    /// Whether the evaluated variances depend on the index and must be refreshed
    /// when the coefficients move.
    pub fn depends_on_index(&self) -> bool {
        matches!(self, VarianceSpec::GivenOfIndex(_))
    }

    /// Evaluates the variance for every row. `index` holds `beta' x_i` on the
    /// coefficient scale. Values below [`VARIANCE_FLOOR`] are floored with a warning.
    pub fn evaluate(&self, x: &DMatrix<f64>, index: &DVector<f64>) -> Result<DVector<f64>> {
        let n = x.nrows();
        let mut v = match self {
            VarianceSpec::Constant => return Ok(DVector::from_element(n, 1.0)),
            VarianceSpec::GivenOfX(f) => {
                let mut row = vec![0.0; x.ncols()];
                DVector::from_fn(n, |i, _| {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = x[(i, j)];
                    }
                    f(&row)
                })
            }
            VarianceSpec::GivenOfIndex(f) => index.map(|t| f(t)),
            VarianceSpec::PerObservation(values) => {
                if values.len() != n {
                    return Err(Error::Dimension(format!(
                        "{} per-observation variances for {n} rows",
                        values.len()
                    )));
                }
                DVector::from_column_slice(values)
            }
            VarianceSpec::UnknownOfIndex => {
                return Err(Error::InvalidConfig(
                    "unknown variance function has not been estimated yet".into(),
                ))
            }
        };
        floor_variances(&mut v);
        Ok(v)
    }
}

pub(crate) fn floor_variances(v: &mut DVector<f64>) {
    let mut floored = 0usize;
    for value in v.iter_mut() {
        if !(*value >= VARIANCE_FLOOR) {
            *value = VARIANCE_FLOOR;
            floored += 1;
        }
    }
    if floored > 0 {
        log::warn!("{floored} variance values floored at {VARIANCE_FLOOR:e}");
    }
}

impl fmt::Debug for VarianceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VarianceSpec({})", self.kind())
    }
}

/// Mean function and variance specification of the model.
#[derive(Clone, Debug)]
pub struct GlmSpec {
    pub link: Link,
    pub variance: VarianceSpec,
}

impl GlmSpec {
    pub fn new(link: Link, variance: VarianceSpec) -> Self {
        Self { link, variance }
    }

    pub(crate) fn with_variance(&self, variance: VarianceSpec) -> Self {
        Self {
            link: self.link.clone(),
            variance,
        }
    }
}

/// Links available by name from configuration files and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkName {
    Identity,
    Exp,
    LogisticMean,
}

impl LinkName {
    pub fn link(self) -> Link {
        match self {
            LinkName::Identity => Link::Identity,
            LinkName::Exp => Link::Exp,
            LinkName::LogisticMean => Link::LogisticMean,
        }
    }
}

impl FromStr for LinkName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(LinkName::Identity),
            "exp" => Ok(LinkName::Exp),
            "logistic-mean" | "logistic" => Ok(LinkName::LogisticMean),
            other => Err(Error::InvalidConfig(format!(
                "unknown link '{other}' (expected identity, exp or logistic-mean)"
            ))),
        }
    }
}

/// Variance specifications available by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceName {
    #[default]
    Constant,
    /// The natural mean-variance relation of the link, as a function of the index:
    /// `g(1 - g)` for logistic-mean, `g` for exp, `1` for identity.
    MeanVariance,
    UnknownOfIndex,
}

impl VarianceName {
    pub fn variance(self, link: LinkName) -> VarianceSpec {
        match self {
            VarianceName::Constant => VarianceSpec::Constant,
            VarianceName::UnknownOfIndex => VarianceSpec::UnknownOfIndex,
            VarianceName::MeanVariance => match link {
                LinkName::Identity => VarianceSpec::Constant,
                LinkName::Exp => VarianceSpec::of_index(f64::exp),
                LinkName::LogisticMean => VarianceSpec::of_index(|t| {
                    let g = Link::LogisticMean.mean(t);
                    g * (1.0 - g)
                }),
            },
        }
    }
}

impl FromStr for VarianceName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(VarianceName::Constant),
            "mean-variance" => Ok(VarianceName::MeanVariance),
            "unknown-of-index" | "unknown" => Ok(VarianceName::UnknownOfIndex),
            other => Err(Error::InvalidConfig(format!(
                "unknown variance '{other}' (expected constant, mean-variance or unknown-of-index)"
            ))),
        }
    }
}

pub fn spec_from_names(link: LinkName, variance: VarianceName) -> GlmSpec {
    GlmSpec::new(link.link(), variance.variance(link))
}

const DERIVATIVE_PROBES: [f64; 13] = [
    -3.0, -2.5, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0,
];

/// Checks the dataset and model specification before fitting.
///
/// `two_stage` requests the stricter checks of the direction/scale procedures,
/// which need at least two predictors.
pub fn validate(dataset: &Dataset, spec: &GlmSpec, two_stage: bool) -> Result<()> {
    let (n, p) = (dataset.n(), dataset.p());
    if p == 0 {
        return Err(Error::Dimension("no predictors".into()));
    }
    if two_stage && p < 2 {
        return Err(Error::Dimension(
            "the two-stage procedures need at least two predictors".into(),
        ));
    }
    if n < p + 2 {
        return Err(Error::Dimension(format!(
            "{n} observations for {p} predictors; need at least {}",
            p + 2
        )));
    }
    for j in 0..p {
        for i in 0..n {
            if !dataset.x[(i, j)].is_finite() {
                return Err(Error::NonFinite {
                    what: "predictors",
                    row: i,
                    col: j,
                });
            }
        }
    }
    if let Some(i) = dataset.y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "response",
            row: i,
            col: 0,
        });
    }

    match &spec.variance {
        VarianceSpec::GivenOfX(f) => {
            let mut row = vec![0.0; p];
            for i in 0..n {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = dataset.x[(i, j)];
                }
                let value = f(&row);
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::NonPositiveVariance { row: i, value });
                }
            }
        }
        VarianceSpec::PerObservation(values) => {
            if values.len() != n {
                return Err(Error::Dimension(format!(
                    "{} per-observation variances for {n} rows",
                    values.len()
                )));
            }
            if let Some(i) = values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::NonPositiveVariance {
                    row: i,
                    value: values[i],
                });
            }
        }
        _ => {}
    }

    check_derivative(&spec.link)
}

fn check_derivative(link: &Link) -> Result<()> {
    for &t in &DERIVATIVE_PROBES {
        let step = 1e-5 * t.abs().max(1.0);
        let hi = link.mean(t + step);
        let lo = link.mean(t - step);
        let analytic = link.derivative(t);
        if !(hi.is_finite() && lo.is_finite() && analytic.is_finite()) {
            continue;
        }
        let numeric = (hi - lo) / (2.0 * step);
        if (numeric - analytic).abs() > 1e-5 * analytic.abs().max(1.0) {
            return Err(Error::DerivativeMismatch {
                t,
                analytic,
                numeric,
            });
        }
    }
    Ok(())
}

/// Which two-stage procedure produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    /// Scale kept from the initial fit.
    One,
    /// Scale re-estimated along the fitted direction.
    Two,
}

/// Result of a two-stage fit: `beta = alpha * gamma` with `gamma` on the unit
/// sphere parametrized by `theta`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub procedure: Procedure,
    pub beta: DVector<f64>,
    pub alpha: f64,
    pub gamma: DVector<f64>,
    pub theta: DVector<f64>,
    pub scheme: ReparamScheme,
    /// Classical quasi-likelihood estimate from the first stage.
    pub beta_initial: DVector<f64>,
    /// Signed norm of `beta_initial`; the sign makes the pivot of the direction positive.
    pub alpha_initial: f64,
    pub stages: Vec<StageDiagnostics>,
    /// `true` for observations kept by the trimming indicator.
    pub trim_mask: Vec<bool>,
    pub trimmed_count: usize,
    pub bandwidth: f64,
    /// Column means subtracted from the predictors before fitting.
    pub center: Vec<f64>,
    /// Per-observation variances when the variance function was estimated.
    pub estimated_variance: Option<Vec<f64>>,
}

impl FitResult {
    /// The variance specification the fit actually used.
    pub fn resolved_spec(&self, spec: &GlmSpec) -> GlmSpec {
        match &self.estimated_variance {
            Some(v) => spec.with_variance(VarianceSpec::PerObservation(v.clone().into())),
            None => spec.clone(),
        }
    }
}
