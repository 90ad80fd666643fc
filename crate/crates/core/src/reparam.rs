//! Parametrizations of the unit sphere by a free `(p-1)`-vector `theta`.
//!
//! Two schemes are provided. Remove-one-component keeps the non-pivot
//! coordinates of `gamma` and recovers the pivot as `sqrt(1 - |theta|^2)`.
//! Polar writes `gamma` through `p - 1` angles with the pivot coordinate equal
//! to `sin(theta_{p-1})`. Both keep the pivot coordinate positive, and both
//! produce a Jacobian whose columns are orthogonal to `gamma`.
//!
//! Pivots are 0-based.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iterates of the remove-one-component scheme are kept inside this radius.
pub const ROC_MAX_RADIUS: f64 = 1.0 - 1e-6;
/// Distance kept from the edges of the polar angle intervals when projecting.
pub const POLAR_MARGIN: f64 = 1e-6;
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SchemeKind {
    #[default]
    #[serde(rename = "roc")]
    RemoveOneComponent,
    #[serde(rename = "polar")]
    Polar,
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roc" | "remove-one-component" => Ok(SchemeKind::RemoveOneComponent),
            "polar" => Ok(SchemeKind::Polar),
            other => Err(Error::InvalidConfig(format!(
                "unknown scheme '{other}' (expected roc or polar)"
            ))),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::RemoveOneComponent => "roc",
            SchemeKind::Polar => "polar",
        })
    }
}

/// A parametrization scheme bound to a dimension and a pivot coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReparamScheme {
    pub kind: SchemeKind,
    pub pivot: usize,
    pub dim: usize,
}

impl ReparamScheme {
    pub fn new(kind: SchemeKind, pivot: usize, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Dimension(format!(
                "sphere parametrization needs p >= 2, got {dim}"
            )));
        }
        if pivot >= dim {
            return Err(Error::Domain(format!("pivot {pivot} outside 0..{dim}")));
        }
        Ok(Self { kind, pivot, dim })
    }

    pub fn remove_one_component(pivot: usize, dim: usize) -> Result<Self> {
        Self::new(SchemeKind::RemoveOneComponent, pivot, dim)
    }

    pub fn polar(pivot: usize, dim: usize) -> Result<Self> {
        Self::new(SchemeKind::Polar, pivot, dim)
    }

    /// Coordinate order that moves the pivot to the end.
    fn order(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim)
            .filter(move |&j| j != self.pivot)
            .chain(std::iter::once(self.pivot))
    }

    fn check_len(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() + 1 != self.dim {
            return Err(Error::Dimension(format!(
                "theta has {} entries for p = {}",
                theta.len(),
                self.dim
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("non-finite theta".into()));
        }
        Ok(())
    }

    /// Closed angle intervals of the polar scheme, by angle position.
    fn polar_interval(&self, k: usize) -> (f64, f64) {
        let m = self.dim - 1;
        if m == 1 {
            (0.0, PI)
        } else if k == m - 1 {
            (0.0, FRAC_PI_2)
        } else if k == 0 {
            (-PI, PI)
        } else {
            (-FRAC_PI_2, FRAC_PI_2)
        }
    }

    fn check_domain(&self, theta: &DVector<f64>) -> Result<()> {
        self.check_len(theta)?;
        match self.kind {
            SchemeKind::RemoveOneComponent => {
                let norm = theta.norm();
                if norm > 1.0 + DOMAIN_SLACK {
                    return Err(Error::Domain(format!(
                        "remove-one-component theta has norm {norm} > 1"
                    )));
                }
            }
            SchemeKind::Polar => {
                for (k, &t) in theta.iter().enumerate() {
                    let (lo, hi) = self.polar_interval(k);
                    if t < lo - DOMAIN_SLACK || t > hi + DOMAIN_SLACK {
                        return Err(Error::Domain(format!(
                            "polar angle {k} = {t} outside [{lo}, {hi}]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Maps an arbitrary iterate back into the working domain. Returns whether
    /// a constraint was active (angle wrapping does not count).
    pub fn project(&self, theta: &DVector<f64>) -> (DVector<f64>, bool) {
        match self.kind {
            SchemeKind::RemoveOneComponent => {
                let norm = theta.norm();
                if norm >= ROC_MAX_RADIUS {
                    (theta * (ROC_MAX_RADIUS / norm), true)
                } else {
                    (theta.clone(), false)
                }
            }
            SchemeKind::Polar => {
                let mut out = theta.clone();
                let mut clamped = false;
                let m = self.dim - 1;
                for k in 0..m {
                    if m > 1 && k == 0 {
                        out[0] = wrap_angle(out[0]);
                        continue;
                    }
                    let (lo, hi) = self.polar_interval(k);
                    let (lo, hi) = (lo + POLAR_MARGIN, hi - POLAR_MARGIN);
                    if out[k] < lo {
                        out[k] = lo;
                        clamped = true;
                    } else if out[k] > hi {
                        out[k] = hi;
                        clamped = true;
                    }
                }
                (out, clamped)
            }
        }
    }
}

fn wrap_angle(t: f64) -> f64 {
    let mut w = (t + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Unit direction `gamma(theta)`; its pivot coordinate is non-negative.
pub fn gamma_from_theta(scheme: &ReparamScheme, theta: &DVector<f64>) -> Result<DVector<f64>> {
    scheme.check_domain(theta)?;
    let p = scheme.dim;
    let mut gamma = DVector::zeros(p);
    match scheme.kind {
        SchemeKind::RemoveOneComponent => {
            let rest = (1.0 - theta.norm_squared()).max(0.0);
            let mut k = 0;
            for j in 0..p {
                if j == scheme.pivot {
                    gamma[j] = rest.sqrt();
                } else {
                    gamma[j] = theta[k];
                    k += 1;
                }
            }
        }
        SchemeKind::Polar => {
            let q = polar_components(theta);
            for (slot, j) in scheme.order().enumerate() {
                gamma[j] = q[slot];
            }
        }
    }
    Ok(gamma)
}

/// Components of the polar map with the positive coordinate last.
fn polar_components(theta: &DVector<f64>) -> Vec<f64> {
    let m = theta.len();
    let (s, c): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| t.sin_cos()).unzip();
    let mut q = vec![0.0; m + 1];
    q[0] = c.iter().product();
    for k in 1..=m {
        q[k] = s[k - 1] * c[k..].iter().product::<f64>();
    }
    q
}

/// Inverse of [`gamma_from_theta`] for a unit vector with positive pivot.
pub fn theta_from_gamma(scheme: &ReparamScheme, gamma: &DVector<f64>) -> Result<DVector<f64>> {
    let p = scheme.dim;
    if gamma.len() != p {
        return Err(Error::Dimension(format!(
            "gamma has {} entries for p = {p}",
            gamma.len()
        )));
    }
    let norm = gamma.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!("gamma has norm {norm}, expected 1")));
    }
    let pivot_value = gamma[scheme.pivot];
    if pivot_value <= 0.0 {
        return Err(Error::Sign {
            pivot: scheme.pivot,
            value: pivot_value,
        });
    }
    match scheme.kind {
        SchemeKind::RemoveOneComponent => Ok(DVector::from_iterator(
            p - 1,
            (0..p).filter(|&j| j != scheme.pivot).map(|j| gamma[j]),
        )),
        SchemeKind::Polar => {
            let q: Vec<f64> = scheme.order().map(|j| gamma[j]).collect();
            let m = p - 1;
            let mut theta = DVector::zeros(m);
            // prefix norms: radius[k] = |q[0..k]|
            let mut radius = vec![0.0; p + 1];
            let mut acc = 0.0;
            for k in 0..p {
                acc += q[k] * q[k];
                radius[k + 1] = acc.sqrt();
            }
            for k in (2..=m).rev() {
                theta[k - 1] = q[k].atan2(radius[k]);
            }
            theta[0] = q[1].atan2(q[0]);
            Ok(theta)
        }
    }
}

/// Analytic Jacobian `d gamma / d theta`, a `p x (p-1)` matrix.
pub fn jacobian(scheme: &ReparamScheme, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    scheme.check_domain(theta)?;
    let p = scheme.dim;
    let m = p - 1;
    let mut jac = DMatrix::zeros(p, m);
    match scheme.kind {
        SchemeKind::RemoveOneComponent => {
            let rest = 1.0 - theta.norm_squared();
            if rest <= 0.0 {
                return Err(Error::Domain(
                    "remove-one-component Jacobian undefined on the unit circle".into(),
                ));
            }
            let scale = -1.0 / rest.sqrt();
            let mut k = 0;
            for j in 0..p {
                if j == scheme.pivot {
                    for c in 0..m {
                        jac[(j, c)] = scale * theta[c];
                    }
                } else {
                    jac[(j, k)] = 1.0;
                    k += 1;
                }
            }
        }
        SchemeKind::Polar => {
            let (s, c): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| t.sin_cos()).unzip();
            let prod_except = |from: usize, skip: usize| -> f64 {
                (from..m).filter(|&i| i != skip).map(|i| c[i]).product()
            };
            let rows: Vec<usize> = scheme.order().collect();
            for a in 0..m {
                jac[(rows[0], a)] = -s[a] * prod_except(0, a);
            }
            for k in 1..=m {
                for a in (k - 1)..m {
                    jac[(rows[k], a)] = if a == k - 1 {
                        c[k - 1] * prod_except(k, usize::MAX)
                    } else {
                        -s[k - 1] * s[a] * prod_except(k, a)
                    };
                }
            }
        }
    }
    Ok(jac)
}

/// The `p x p` matrix `A = [gamma | J]`.
pub fn assemble_a(scheme: &ReparamScheme, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let gamma = gamma_from_theta(scheme, theta)?;
    let jac = jacobian(scheme, theta)?;
    let p = scheme.dim;
    let mut a = DMatrix::zeros(p, p);
    a.column_mut(0).copy_from(&gamma);
    a.columns_mut(1, p - 1).copy_from(&jac);
    Ok(a)
}

/// Coordinate of largest magnitude (smallest index on ties) and its sign.
pub fn select_pivot(gamma: &DVector<f64>) -> (usize, f64) {
    let mut best = 0;
    for (j, v) in gamma.iter().enumerate() {
        if v.abs() > gamma[best].abs() {
            best = j;
        }
    }
    let sign = if gamma[best] < 0.0 { -1.0 } else { 1.0 };
    (best, sign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_3;
    use std::f64::consts::FRAC_PI_6;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn roc_forward_example() {
        let s = ReparamScheme::remove_one_component(1, 3).unwrap();
        let g = gamma_from_theta(&s, &dv(&[0.6, 0.0])).unwrap();
        assert_abs_diff_eq!(g, dv(&[0.6, 0.8, 0.0]), epsilon = 1e-15);
        let t = theta_from_gamma(&s, &g).unwrap();
        assert_abs_diff_eq!(t, dv(&[0.6, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn polar_forward_examples() {
        let s = ReparamScheme::polar(2, 3).unwrap();
        let g = gamma_from_theta(&s, &dv(&[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(g, dv(&[1.0, 0.0, 0.0]), epsilon = 1e-15);

        let g = gamma_from_theta(&s, &dv(&[FRAC_PI_6, FRAC_PI_3])).unwrap();
        // independent evaluation of the product formula
        let expected = [
            FRAC_PI_6.cos() * FRAC_PI_3.cos(),
            FRAC_PI_6.sin() * FRAC_PI_3.cos(),
            FRAC_PI_3.sin(),
        ];
        assert_abs_diff_eq!(g, dv(&expected), epsilon = 1e-15);
        assert_abs_diff_eq!(g.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_direction_maps_to_origin() {
        let e = dv(&[0.0, 1.0, 0.0, 0.0]);
        let roc = ReparamScheme::remove_one_component(1, 4).unwrap();
        assert_eq!(theta_from_gamma(&roc, &e).unwrap(), DVector::zeros(3));
        // the polar pole sits at theta_{p-1} = pi/2, the other angles at zero
        let polar = ReparamScheme::polar(1, 4).unwrap();
        let t = theta_from_gamma(&polar, &e).unwrap();
        assert_abs_diff_eq!(t, dv(&[0.0, 0.0, FRAC_PI_2]), epsilon = 1e-15);
        assert_abs_diff_eq!(gamma_from_theta(&polar, &t).unwrap(), e, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_examples() {
        let roc = ReparamScheme::remove_one_component(1, 2).unwrap();
        let theta = dv(&[0.6]);
        let j = jacobian(&roc, &theta).unwrap();
        assert_abs_diff_eq!(
            j,
            DMatrix::from_column_slice(2, 1, &[1.0, -0.75]),
            epsilon = 1e-15
        );
        let g = gamma_from_theta(&roc, &theta).unwrap();
        assert_abs_diff_eq!((g.transpose() * &j)[0], 0.0, epsilon = 1e-15);

        let polar = ReparamScheme::polar(1, 2).unwrap();
        let t = 0.3;
        let j = jacobian(&polar, &dv(&[t])).unwrap();
        assert_abs_diff_eq!(
            j,
            DMatrix::from_column_slice(2, 1, &[-t.sin(), t.cos()]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn polar_two_dimensional_a_is_rotation() {
        let polar = ReparamScheme::polar(1, 2).unwrap();
        let a = assemble_a(&polar, &dv(&[FRAC_PI_6])).unwrap();
        assert_abs_diff_eq!(a.transpose() * &a, DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn roc_a_block_structure() {
        let roc = ReparamScheme::remove_one_component(1, 3).unwrap();
        let a = assemble_a(&roc, &dv(&[0.6, 0.0])).unwrap();
        let ata = a.transpose() * &a;
        assert_abs_diff_eq!(ata[(0, 0)], 1.0, epsilon = 1e-12);
        for k in 1..3 {
            assert_abs_diff_eq!(ata[(0, k)], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ata[(k, 0)], 0.0, epsilon = 1e-12);
        }
        let sv = a.clone().singular_values();
        let cond = sv.max() / sv.min();
        assert!(cond.is_finite() && cond < 1e6, "cond = {cond}");
    }

    #[test]
    fn pivot_selection() {
        assert_eq!(select_pivot(&dv(&[0.1, -0.9, 0.42])), (1, -1.0));
        assert_eq!(select_pivot(&dv(&[0.5, 0.5, 0.5, 0.5])), (0, 1.0));
        assert_eq!(select_pivot(&dv(&[0.0, 0.0, 1.0])), (2, 1.0));
    }

    #[test]
    fn domain_errors() {
        let roc = ReparamScheme::remove_one_component(0, 3).unwrap();
        assert!(matches!(
            gamma_from_theta(&roc, &dv(&[0.9, 0.9])),
            Err(Error::Domain(_))
        ));
        let polar = ReparamScheme::polar(2, 3).unwrap();
        assert!(matches!(
            gamma_from_theta(&polar, &dv(&[0.1, 2.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            theta_from_gamma(&roc, &dv(&[-0.6, 0.8, 0.0])),
            Err(Error::Sign { pivot: 0, .. })
        ));
        assert!(ReparamScheme::polar(3, 3).is_err());
    }

    #[test]
    fn projection_keeps_iterates_feasible() {
        let roc = ReparamScheme::remove_one_component(0, 3).unwrap();
        let (t, hit) = roc.project(&dv(&[3.0, 4.0]));
        assert!(hit);
        assert_abs_diff_eq!(t.norm(), ROC_MAX_RADIUS, epsilon = 1e-15);
        let polar = ReparamScheme::polar(0, 4).unwrap();
        let (t, hit) = polar.project(&dv(&[4.0, 0.1, 2.0]));
        assert!(hit);
        assert_abs_diff_eq!(t[0], 4.0 - 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(t[2], FRAC_PI_2 - POLAR_MARGIN, epsilon = 1e-15);
    }

    fn unit_with_pivot(raw: Vec<f64>, pivot: usize) -> DVector<f64> {
        let mut g = DVector::from_vec(raw);
        g[pivot] = g[pivot].abs() + 0.05;
        g.normalize()
    }

    proptest! {
        #[test]
        fn round_trip_gamma_theta_gamma(
            raw in proptest::collection::vec(-1.0f64..1.0, 2..9),
            pivot_seed in 0usize..64,
            polar in any::<bool>(),
        ) {
            let p = raw.len();
            let pivot = pivot_seed % p;
            let gamma = unit_with_pivot(raw, pivot);
            let kind = if polar { SchemeKind::Polar } else { SchemeKind::RemoveOneComponent };
            let scheme = ReparamScheme::new(kind, pivot, p).unwrap();
            let theta = theta_from_gamma(&scheme, &gamma).unwrap();
            let back = gamma_from_theta(&scheme, &theta).unwrap();
            prop_assert!((back - &gamma).amax() < 1e-10);
        }

        #[test]
        fn jacobian_orthogonal_to_gamma(
            raw in proptest::collection::vec(-1.0f64..1.0, 2..9),
            pivot_seed in 0usize..64,
            polar in any::<bool>(),
        ) {
            let p = raw.len();
            let pivot = pivot_seed % p;
            let gamma = unit_with_pivot(raw, pivot);
            let kind = if polar { SchemeKind::Polar } else { SchemeKind::RemoveOneComponent };
            let scheme = ReparamScheme::new(kind, pivot, p).unwrap();
            let theta = theta_from_gamma(&scheme, &gamma).unwrap();
            let j = jacobian(&scheme, &theta).unwrap();
            prop_assert!((gamma.transpose() * &j).amax() < 1e-10);
            if polar {
                let jtj = j.transpose() * &j;
                for a in 0..p - 1 {
                    for b in 0..p - 1 {
                        if a != b {
                            prop_assert!(jtj[(a, b)].abs() < 1e-10);
                        }
                    }
                }
            }
        }
    }
}
