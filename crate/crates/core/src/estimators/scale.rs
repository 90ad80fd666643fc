//! Scale equation `G(alpha) = sum (y - g(alpha z)) g'(alpha z) z / v`, `z = gamma'x`.

use nalgebra::DVector;

use super::{SolverConfig, Stage, StageDiagnostics};
use crate::error::{Error, Result};
use crate::model::{Dataset, GlmSpec};

const MAX_EXTENSIONS: usize = 8;

#[derive(Debug, Clone)]
pub struct ScaleFit {
    pub alpha: f64,
    pub diagnostics: StageDiagnostics,
}

/// `G(alpha)` and its scoring slope `-sum g'^2 z^2 / v` over the kept rows.
pub fn scale_equation(
    dataset: &Dataset,
    spec: &GlmSpec,
    gamma: &DVector<f64>,
    alpha: f64,
    mask: Option<&[bool]>,
) -> Result<(f64, f64)> {
    let z = dataset.x() * gamma;
    let t = &z * alpha;
    let v = spec.variance.evaluate(dataset.x(), &t)?;
    let (mut value, mut slope) = (0.0, 0.0);
    for i in 0..dataset.n() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let d = spec.link.derivative(t[i]);
        value += (dataset.y()[i] - spec.link.mean(t[i])) * d * z[i] / v[i];
        slope -= d * d * z[i] * z[i] / v[i];
    }
    Ok((value, slope))
}

/// Root of the scale equation along a fixed direction.
///
/// A sign change is bracketed starting from `[alpha_init / 4, 4 alpha_init]`,
/// widening geometrically up to eight times, and the root is then polished by
/// Newton steps on the scoring slope with bisection whenever a step leaves the
/// bracket or fails to halve the equation.
pub fn solve_scale(
    dataset: &Dataset,
    spec: &GlmSpec,
    gamma: &DVector<f64>,
    alpha_init: f64,
    mask: Option<&[bool]>,
    config: &SolverConfig,
) -> Result<ScaleFit> {
    if gamma.len() != dataset.p() {
        return Err(Error::Dimension(format!(
            "direction has {} entries for {} predictors",
            gamma.len(),
            dataset.p()
        )));
    }
    if !alpha_init.is_finite() {
        return Err(Error::Domain(format!("initial scale {alpha_init}")));
    }
    let root_n = (dataset.n() as f64).sqrt();
    let mut diag = StageDiagnostics::new(Stage::Scale);
    let eval = |a: f64| -> Option<(f64, f64)> {
        scale_equation(dataset, spec, gamma, a, mask)
            .ok()
            .filter(|(f, s)| f.is_finite() && s.is_finite())
    };

    let (f0, _) = eval(alpha_init)
        .ok_or_else(|| Error::Domain("scale equation not finite at the start".into()))?;
    diag.residual_norm = f0.abs() / root_n;
    if diag.residual_norm < config.residual_tol {
        diag.converged = true;
        return Ok(ScaleFit {
            alpha: alpha_init,
            diagnostics: diag,
        });
    }

    let (mut lo, mut hi) = if alpha_init == 0.0 {
        (-1.0, 1.0)
    } else {
        let (a, b) = (alpha_init / 4.0, alpha_init * 4.0);
        (a.min(b), a.max(b))
    };
    let mut f_lo = eval(lo);
    let mut f_hi = eval(hi);
    let mut extensions = 0;
    loop {
        if let (Some((fl, _)), Some((fh, _))) = (f_lo, f_hi) {
            if fl == 0.0 || fh == 0.0 || fl.signum() != fh.signum() {
                break;
            }
        }
        if extensions == MAX_EXTENSIONS {
            return Err(Error::NoBracket { extensions, lo, hi });
        }
        extensions += 1;
        if alpha_init > 0.0 {
            lo /= 4.0;
            hi *= 4.0;
        } else if alpha_init < 0.0 {
            lo *= 4.0;
            hi /= 4.0;
        } else {
            lo *= 4.0;
            hi *= 4.0;
        }
        f_lo = eval(lo);
        f_hi = eval(hi);
    }
    let (fl, _) = f_lo.unwrap();
    let (fh, _) = f_hi.unwrap();
    if fl == 0.0 || fh == 0.0 {
        let alpha = if fl == 0.0 { lo } else { hi };
        diag.residual_norm = 0.0;
        diag.converged = true;
        return Ok(ScaleFit {
            alpha,
            diagnostics: diag,
        });
    }
    // orient so that f(lo) < 0 < f(hi)
    if fl > 0.0 {
        std::mem::swap(&mut lo, &mut hi);
    }

    let mut x = if (alpha_init - lo) * (alpha_init - hi) < 0.0 {
        alpha_init
    } else {
        0.5 * (lo + hi)
    };
    let mut dx_old = (hi - lo).abs();
    let mut dx = dx_old;
    let (mut f, mut df) =
        eval(x).ok_or_else(|| Error::Domain("scale equation not finite".into()))?;
    loop {
        diag.residual_norm = f.abs() / root_n;
        let width = (hi - lo).abs();
        if diag.residual_norm < config.residual_tol
            || width <= 4.0 * f64::EPSILON * x.abs().max(1.0)
        {
            diag.converged = true;
            return Ok(ScaleFit {
                alpha: x,
                diagnostics: diag,
            });
        }
        if diag.iterations >= config.max_iter {
            return Err(diag.fail());
        }
        diag.iterations += 1;
        let newton_leaves = ((x - hi) * df - f) * ((x - lo) * df - f) > 0.0;
        if df == 0.0 || newton_leaves || (2.0 * f).abs() > (dx_old * df).abs() {
            dx_old = dx;
            dx = 0.5 * (hi - lo);
            x = lo + dx;
        } else {
            dx_old = dx;
            dx = f / df;
            x -= dx;
        }
        diag.step_norm = dx.abs();
        (f, df) = eval(x).ok_or_else(|| Error::Domain("scale equation not finite".into()))?;
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
    }
}
