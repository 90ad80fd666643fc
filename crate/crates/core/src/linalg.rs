//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest condition number accepted before falling back to a pseudo-inverse.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SymInverse {
    pub inverse: DMatrix<f64>,
    /// `lambda_max / lambda_min`; infinite when the matrix is not positive definite.
    pub condition: f64,
    /// Whether the Moore-Penrose fallback was used.
    pub pseudo: bool,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Inverse of a symmetric positive semidefinite matrix via its eigen decomposition.
/// Above [`CONDITION_LIMIT`] the eigenvalues below `lambda_max / CONDITION_LIMIT`
/// are dropped, giving the Moore-Penrose inverse of the truncated matrix.
pub fn sym_inverse(m: &DMatrix<f64>) -> SymInverse {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let pseudo = !(condition <= CONDITION_LIMIT);
    let cutoff = max / CONDITION_LIMIT;
    let inv_vals = eig
        .eigenvalues
        .map(|l| if pseudo && l <= cutoff { 0.0 } else { 1.0 / l });
    let q = &eig.eigenvectors;
    let inverse = symmetrize(&(q * DMatrix::from_diagonal(&inv_vals) * q.transpose()));
    if pseudo {
        log::warn!("ill-conditioned matrix (condition {condition:.3e}); using pseudo-inverse");
    }
    SymInverse {
        inverse,
        condition,
        pseudo,
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Solves a general square system, `None` when it is numerically singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
