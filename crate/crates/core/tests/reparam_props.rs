use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use proptest::prelude::*;
use semiql::reparam::{assemble_a, gamma_from_theta, jacobian, theta_from_gamma};
use semiql::{ReparamScheme, SchemeKind};

const INSET: f64 = 0.02;

/// A scheme and a point well inside its domain, built from uniform draws.
fn scheme_and_theta() -> impl Strategy<Value = (ReparamScheme, DVector<f64>)> {
    (2usize..=8, any::<bool>(), any::<prop::sample::Index>())
        .prop_flat_map(|(p, polar, pivot)| {
            let kind = if polar {
                SchemeKind::Polar
            } else {
                SchemeKind::RemoveOneComponent
            };
            let scheme = ReparamScheme::new(kind, pivot.index(p), p).unwrap();
            (
                Just(scheme),
                prop::collection::vec(0.0..1.0f64, p - 1),
                0.0..1.0f64,
            )
        })
        .prop_map(|(scheme, u, radius)| {
            let m = scheme.dim - 1;
            let theta = match scheme.kind {
                SchemeKind::RemoveOneComponent => {
                    let raw = DVector::from_iterator(m, u.iter().map(|v| v - 0.5));
                    let norm = raw.norm().max(1e-12);
                    raw * ((1.0 - 2.0 * INSET) * radius / norm)
                }
                SchemeKind::Polar => DVector::from_iterator(
                    m,
                    u.iter().enumerate().map(|(k, &v)| {
                        let (lo, hi) = if m == 1 {
                            (0.0, PI)
                        } else if k == m - 1 {
                            (0.0, FRAC_PI_2)
                        } else if k == 0 {
                            (-PI, PI)
                        } else {
                            (-FRAC_PI_2, FRAC_PI_2)
                        };
                        lo + INSET + (hi - lo - 2.0 * INSET) * v
                    }),
                ),
            };
            (scheme, theta)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn direction_is_unit_with_positive_pivot((scheme, theta) in scheme_and_theta()) {
        let gamma = gamma_from_theta(&scheme, &theta).unwrap();
        prop_assert!((gamma.norm() - 1.0).abs() < 1e-12);
        prop_assert!(gamma[scheme.pivot] > 0.0);
    }

    #[test]
    fn jacobian_is_tangent((scheme, theta) in scheme_and_theta()) {
        let gamma = gamma_from_theta(&scheme, &theta).unwrap();
        let jac = jacobian(&scheme, &theta).unwrap();
        let dots = jac.tr_mul(&gamma);
        prop_assert!(dots.amax() < 1e-10, "gamma'J = {dots}");
        if scheme.kind == SchemeKind::Polar {
            let gram = jac.tr_mul(&jac);
            for i in 0..gram.nrows() {
                for j in 0..gram.ncols() {
                    if i != j {
                        prop_assert!(gram[(i, j)].abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences((scheme, theta) in scheme_and_theta()) {
        let jac = jacobian(&scheme, &theta).unwrap();
        let h = 1e-6;
        for c in 0..theta.len() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[c] += h;
            down[c] -= h;
            let fd = (gamma_from_theta(&scheme, &up).unwrap() - gamma_from_theta(&scheme, &down).unwrap()) / (2.0 * h);
            let err = (fd - jac.column(c)).amax();
            prop_assert!(err < 1e-6, "column {c}: {err}");
        }
    }

    #[test]
    fn round_trip((scheme, theta) in scheme_and_theta()) {
        let gamma = gamma_from_theta(&scheme, &theta).unwrap();
        let back = theta_from_gamma(&scheme, &gamma).unwrap();
        prop_assert!((&back - &theta).amax() < 1e-10);
        let again = gamma_from_theta(&scheme, &back).unwrap();
        prop_assert!((again - gamma).amax() < 1e-10);
    }

    #[test]
    fn gram_of_a_has_unit_corner_and_zero_cross_blocks((scheme, theta) in scheme_and_theta()) {
        let a = assemble_a(&scheme, &theta).unwrap();
        let gram = a.tr_mul(&a);
        prop_assert!((gram[(0, 0)] - 1.0).abs() < 1e-10);
        for j in 1..scheme.dim {
            prop_assert!(gram[(0, j)].abs() < 1e-10);
            prop_assert!(gram[(j, 0)].abs() < 1e-10);
        }
    }
}
