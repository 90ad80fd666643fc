//! Local linear regression on a scalar index.
//!
//! At an evaluation point `z` the intercept `a` and slope `b` minimize
//! `sum_i [y_i - a - b (z_i - z)]^2 K_h(z_i - z)`; `a` estimates the conditional
//! mean and `b` its derivative. The same normal equations give the
//! `(S_0 S_2 - S_1^2) / h^2` statistic used for trimming, which tends to
//! `mu_2 f(z)^2` rather than to the density `f` itself.
//!
//! The local normal equations are formed in the scaled variable `u = (z_i - z) / h`
//! and ridged by `1e-12 * trace` before solving.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::model::VARIANCE_FLOOR;

const RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum Bandwidth {
    Fixed(f64),
    /// `h = multiplier * sd(index) * n^(-1/5)`.
    Auto(f64),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Auto(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum Trimming {
    /// Keep points whose statistic exceeds `c0`; `c0 <= 0` keeps everything.
    Threshold(f64),
    /// Use the `q`-quantile of the sample statistics as `c0`.
    Quantile(f64),
}

impl Default for Trimming {
    fn default() -> Self {
        Trimming::Quantile(0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmootherConfig {
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
    pub trimming: Trimming,
    /// Exclude each observation from its own fit when evaluating at sample points.
    pub leave_one_out: bool,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Epanechnikov,
            bandwidth: Bandwidth::default(),
            trimming: Trimming::default(),
            leave_one_out: true,
        }
    }
}

impl SmootherConfig {
    pub fn with_bandwidth(mut self, bandwidth: Bandwidth) -> Self {
        self.bandwidth = bandwidth;
        self
    }

    pub fn with_trimming(mut self, trimming: Trimming) -> Self {
        self.trimming = trimming;
        self
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_leave_one_out(mut self, on: bool) -> Self {
        self.leave_one_out = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            Bandwidth::Fixed(h) | Bandwidth::Auto(h) if !(h > 0.0 && h.is_finite()) => {
                return Err(Error::InvalidConfig(format!(
                    "bandwidth value {h} must be positive"
                )))
            }
            _ => {}
        }
        match self.trimming {
            Trimming::Quantile(q) if !(0.0..1.0).contains(&q) => Err(Error::InvalidConfig(
                format!("trimming quantile {q} outside [0, 1)"),
            )),
            Trimming::Threshold(c) if c.is_nan() => {
                Err(Error::InvalidConfig("trimming threshold is NaN".into()))
            }
            _ => Ok(()),
        }
    }

    /// Bandwidth for smoothing on the given index values.
    pub fn resolve_bandwidth(&self, index: &[f64]) -> Result<f64> {
        self.validate()?;
        match self.bandwidth {
            Bandwidth::Fixed(h) => Ok(h),
            Bandwidth::Auto(c) => {
                let n = index.len();
                if n < 3 {
                    return Err(Error::Dimension(format!(
                        "{n} index values; need at least 3"
                    )));
                }
                let mean = index.iter().sum::<f64>() / n as f64;
                let var = index.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let sd = var.sqrt();
                if !(sd > 0.0) {
                    return Err(Error::Domain("index values have no spread".into()));
                }
                Ok(c * sd * (n as f64).powf(-0.2))
            }
        }
    }
}

/// Which observation an evaluation leaves out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclude {
    Nothing,
    /// The observation at this row position.
    Row(usize),
    /// Every observation whose index equals the evaluation point exactly.
    Coincident,
}

/// Local linear fits: conditional means (`m x k`) and slopes (`m x k`).
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub mean: DMatrix<f64>,
    pub slope: DMatrix<f64>,
}

/// Per-observation weights of one evaluation: `mean = sum w_i y_i`,
/// `slope = sum s_i y_i`.
#[derive(Debug, Clone)]
pub struct LocalWeights {
    pub rows: Vec<usize>,
    pub mean: Vec<f64>,
    pub slope: Vec<f64>,
}

/// Local linear smoother over a fixed sample of index values.
#[derive(Debug, Clone)]
pub struct LocalLinear<'a> {
    index: &'a [f64],
    order: Vec<usize>,
    sorted: Vec<f64>,
    h: f64,
    kernel: Kernel,
}

struct Moments {
    s0: f64,
    s1: f64,
    s2: f64,
}

impl<'a> LocalLinear<'a> {
    pub fn new(index: &'a [f64], h: f64, kernel: Kernel) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth {h} must be positive"
            )));
        }
        if index.iter().any(|z| !z.is_finite()) {
            return Err(Error::Domain("non-finite index value".into()));
        }
        let mut order: Vec<usize> = (0..index.len()).collect();
        order.sort_by(|&a, &b| index[a].total_cmp(&index[b]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&i| index[i]).collect();
        Ok(Self {
            index,
            order,
            sorted,
            h,
            kernel,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    fn window(&self, z: f64) -> Range<usize> {
        match self.kernel.support() {
            Some(half) => {
                let reach = half * self.h;
                let lo = self.sorted.partition_point(|&v| v < z - reach);
                let hi = self.sorted.partition_point(|&v| v <= z + reach);
                lo..hi
            }
            None => 0..self.sorted.len(),
        }
    }

    /// Visits `(row, u, K(u))` for every observation with positive kernel weight.
    fn for_each_in_window(&self, z: f64, exclude: Exclude, mut f: impl FnMut(usize, f64, f64)) {
        for pos in self.window(z) {
            let i = self.order[pos];
            let skip = match exclude {
                Exclude::Nothing => false,
                Exclude::Row(r) => r == i,
                Exclude::Coincident => self.index[i] == z,
            };
            if skip {
                continue;
            }
            let u = (self.index[i] - z) / self.h;
            let k = self.kernel.eval(u);
            if k > 0.0 {
                f(i, u, k);
            }
        }
    }

    /// Ridged determinant and diagonal of the local normal equations.
    fn solve_terms(&self, z: f64, m: &Moments, distinct: bool) -> Result<(f64, f64, f64)> {
        if !distinct {
            return Err(Error::DegenerateWindow { point: z });
        }
        let eps = RIDGE * (m.s0 + m.s2);
        let a00 = m.s0 + eps;
        let a11 = m.s2 + eps;
        let det = a00 * a11 - m.s1 * m.s1;
        if !(det > 0.0 && det.is_finite()) {
            return Err(Error::DegenerateWindow { point: z });
        }
        Ok((a00, a11, det))
    }

    /// Weights of the local fit at `z`.
    pub fn weights(&self, z: f64, exclude: Exclude) -> Result<LocalWeights> {
        let mut rows = Vec::new();
        let mut us = Vec::new();
        let mut ks = Vec::new();
        let mut m = Moments {
            s0: 0.0,
            s1: 0.0,
            s2: 0.0,
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        self.for_each_in_window(z, exclude, |i, u, k| {
            rows.push(i);
            us.push(u);
            ks.push(k);
            m.s0 += k;
            m.s1 += k * u;
            m.s2 += k * u * u;
            lo = lo.min(u);
            hi = hi.max(u);
        });
        let (a00, a11, det) = self.solve_terms(z, &m, hi > lo)?;
        let mean = us
            .iter()
            .zip(&ks)
            .map(|(u, k)| (a11 - m.s1 * u) * k / det)
            .collect();
        let slope = us
            .iter()
            .zip(&ks)
            .map(|(u, k)| (a00 * u - m.s1) * k / (det * self.h))
            .collect();
        Ok(LocalWeights { rows, mean, slope })
    }

    /// Fits every response column at `z`, writing means and slopes into the outputs.
    pub fn fit_point(
        &self,
        z: f64,
        exclude: Exclude,
        responses: &DMatrix<f64>,
        mean: &mut [f64],
        slope: &mut [f64],
    ) -> Result<()> {
        let k_cols = responses.ncols();
        let mut t0 = vec![0.0; k_cols];
        let mut t1 = vec![0.0; k_cols];
        let mut m = Moments {
            s0: 0.0,
            s1: 0.0,
            s2: 0.0,
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        self.for_each_in_window(z, exclude, |i, u, k| {
            m.s0 += k;
            m.s1 += k * u;
            m.s2 += k * u * u;
            lo = lo.min(u);
            hi = hi.max(u);
            for c in 0..k_cols {
                let y = responses[(i, c)];
                t0[c] += k * y;
                t1[c] += k * u * y;
            }
        });
        let (a00, a11, det) = self.solve_terms(z, &m, hi > lo)?;
        for c in 0..k_cols {
            mean[c] = (a11 * t0[c] - m.s1 * t1[c]) / det;
            slope[c] = (a00 * t1[c] - m.s1 * t0[c]) / (det * self.h);
        }
        Ok(())
    }

    /// Fits at arbitrary evaluation points.
    pub fn fit(
        &self,
        responses: &DMatrix<f64>,
        eval_points: &[f64],
        exclude_coincident: bool,
    ) -> Result<LocalFit> {
        self.check_rows(responses)?;
        let k = responses.ncols();
        let mut mean = DMatrix::zeros(eval_points.len(), k);
        let mut slope = DMatrix::zeros(eval_points.len(), k);
        let mut mbuf = vec![0.0; k];
        let mut sbuf = vec![0.0; k];
        let exclude = if exclude_coincident {
            Exclude::Coincident
        } else {
            Exclude::Nothing
        };
        for (row, &z) in eval_points.iter().enumerate() {
            self.fit_point(z, exclude, responses, &mut mbuf, &mut sbuf)?;
            for c in 0..k {
                mean[(row, c)] = mbuf[c];
                slope[(row, c)] = sbuf[c];
            }
        }
        Ok(LocalFit { mean, slope })
    }

    /// Fits at the sample index values. Rows with `mask[i] == false` are skipped
    /// and left as NaN; with `leave_one_out` each row excludes itself.
    pub fn fit_at_samples(
        &self,
        responses: &DMatrix<f64>,
        leave_one_out: bool,
        mask: Option<&[bool]>,
    ) -> Result<LocalFit> {
        self.check_rows(responses)?;
        let n = self.len();
        let k = responses.ncols();
        let mut mean = DMatrix::from_element(n, k, f64::NAN);
        let mut slope = DMatrix::from_element(n, k, f64::NAN);
        let mut mbuf = vec![0.0; k];
        let mut sbuf = vec![0.0; k];
        for i in 0..n {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let exclude = if leave_one_out {
                Exclude::Row(i)
            } else {
                Exclude::Nothing
            };
            self.fit_point(self.index[i], exclude, responses, &mut mbuf, &mut sbuf)?;
            for c in 0..k {
                mean[(i, c)] = mbuf[c];
                slope[(i, c)] = sbuf[c];
            }
        }
        Ok(LocalFit { mean, slope })
    }

    /// `(S_0 S_2 - S_1^2) / h^2` at `z`, with `S_r = n^-1 sum (z_i - z)^r K_h(z_i - z)`.
    pub fn density_statistic(&self, z: f64) -> f64 {
        let mut m = Moments {
            s0: 0.0,
            s1: 0.0,
            s2: 0.0,
        };
        self.for_each_in_window(z, Exclude::Nothing, |_, u, k| {
            m.s0 += k;
            m.s1 += k * u;
            m.s2 += k * u * u;
        });
        let scale = 1.0 / (self.len() as f64 * self.h);
        let (a0, a1, a2) = (m.s0 * scale, m.s1 * scale, m.s2 * scale);
        a0 * a2 - a1 * a1
    }

    fn check_rows(&self, responses: &DMatrix<f64>) -> Result<()> {
        if responses.nrows() != self.len() {
            return Err(Error::Dimension(format!(
                "{} responses for {} index values",
                responses.nrows(),
                self.len()
            )));
        }
        if self.len() < 3 {
            return Err(Error::Dimension(
                "local linear smoothing needs n >= 3".into(),
            ));
        }
        Ok(())
    }
}

/// Local linear mean and slope of each response column at the evaluation points.
///
/// With `leave_one_out` set, observations whose index coincides with an
/// evaluation point are excluded from that point's fit.
pub fn local_linear(
    index: &[f64],
    responses: &DMatrix<f64>,
    eval_points: &[f64],
    config: &SmootherConfig,
) -> Result<LocalFit> {
    let h = config.resolve_bandwidth(index)?;
    LocalLinear::new(index, h, config.kernel)?.fit(responses, eval_points, config.leave_one_out)
}

/// The trimming statistic `(n h^2)^-1 sum_i U_ni(z)` at each evaluation point.
pub fn index_density(
    index: &[f64],
    eval_points: &[f64],
    config: &SmootherConfig,
) -> Result<Vec<f64>> {
    let h = config.resolve_bandwidth(index)?;
    let smoother = LocalLinear::new(index, h, config.kernel)?;
    Ok(eval_points
        .iter()
        .map(|&z| smoother.density_statistic(z))
        .collect())
}

/// Outcome of trimming: `mask[i]` is true for kept observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trim {
    pub mask: Vec<bool>,
    pub trimmed: usize,
    pub threshold: f64,
}

/// Trimming indicator from precomputed statistics.
pub fn trim_from_statistics(stats: &[f64], rule: Trimming) -> Result<Trim> {
    let n = stats.len();
    let threshold = match rule {
        Trimming::Threshold(c0) if c0 <= 0.0 => f64::NEG_INFINITY,
        Trimming::Threshold(c0) => c0,
        Trimming::Quantile(q) => {
            if !(0.0..1.0).contains(&q) {
                return Err(Error::InvalidConfig(format!(
                    "trimming quantile {q} outside [0, 1)"
                )));
            }
            let k = (q * n as f64).ceil() as usize;
            if k == 0 {
                f64::NEG_INFINITY
            } else {
                let mut sorted = stats.to_vec();
                sorted.sort_by(f64::total_cmp);
                let c = sorted[k - 1];
                // ties must not push the trimmed count above k
                let first = sorted.partition_point(|&v| v < c);
                let last = sorted.partition_point(|&v| v <= c);
                if last <= k {
                    c
                } else if first == 0 {
                    f64::NEG_INFINITY
                } else {
                    sorted[first - 1]
                }
            }
        }
    };
    let mask: Vec<bool> = stats.iter().map(|&f| f > threshold).collect();
    let trimmed = mask.iter().filter(|&&keep| !keep).count();
    if trimmed == n {
        return Err(Error::AllTrimmed);
    }
    Ok(Trim {
        mask,
        trimmed,
        threshold,
    })
}

/// Trimming indicator `I{f_hat(z_i) > c0}` at the sample index values.
pub fn trimming_indicator(index: &[f64], config: &SmootherConfig) -> Result<Trim> {
    let stats = index_density(index, index, config)?;
    trim_from_statistics(&stats, config.trimming)
}

/// Smoothed squared residuals, a nonparametric estimate of the variance as a
/// function of the index.
#[derive(Debug, Clone)]
pub struct VarianceSmoother {
    index: Vec<f64>,
    squares: DMatrix<f64>,
    h: f64,
    kernel: Kernel,
}

impl VarianceSmoother {
    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// `v_hat(t)`, floored at the variance floor.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let smoother = LocalLinear::new(&self.index, self.h, self.kernel)?;
        let (mut m, mut s) = ([0.0], [0.0]);
        smoother.fit_point(t, Exclude::Nothing, &self.squares, &mut m, &mut s)?;
        Ok(m[0].max(VARIANCE_FLOOR))
    }

    /// `v_hat` at each of the sample index values.
    pub fn eval_at_samples(&self) -> Result<Vec<f64>> {
        let smoother = LocalLinear::new(&self.index, self.h, self.kernel)?;
        let fit = smoother.fit_at_samples(&self.squares, false, None)?;
        Ok(fit
            .mean
            .column(0)
            .iter()
            .map(|v| v.max(VARIANCE_FLOOR))
            .collect())
    }
}

pub fn smooth_squared_residuals(
    index: &[f64],
    residuals: &[f64],
    config: &SmootherConfig,
) -> Result<VarianceSmoother> {
    if index.len() != residuals.len() {
        return Err(Error::Dimension(format!(
            "{} residuals for {} index values",
            residuals.len(),
            index.len()
        )));
    }
    let h = config.resolve_bandwidth(index)?;
    let squares = DMatrix::from_iterator(residuals.len(), 1, residuals.iter().map(|r| r * r));
    Ok(VarianceSmoother {
        index: index.to_vec(),
        squares,
        h,
        kernel: config.kernel,
    })
}
