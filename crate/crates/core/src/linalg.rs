//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues of a real square matrix (via the real Schur form).
pub fn eigenvalues(j: &DMatrix<f64>) -> Vec<Complex<f64>> {
    j.complex_eigenvalues().iter().copied().collect()
}

/// Matrix sign function by scaled Newton iteration.
///
/// `sign(J)` has the same invariant subspaces as `J`, acting as `-I` on the
/// stable and `+I` on the unstable one. Requires no eigenvalue on the
/// imaginary axis; the caller checks the gap beforehand.
pub fn matrix_sign(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = j.nrows();
    let mut s = j.clone();
    for _ in 0..100 {
        let inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("singular iterate in matrix sign".into()))?;
        // determinantal scaling speeds up the early iterations
        let det = s.determinant().abs();
        let mu = if det.is_finite() && det > 0.0 {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&s * mu + inv / mu) * 0.5;
        let change = (&next - &s).norm();
        s = next;
        if change <= 1e-14 * s.norm().max(1.0) {
            // one unscaled polish step
            if let Some(inv) = s.clone().try_inverse() {
                s = (&s + inv) * 0.5;
            }
            return Ok(s);
        }
    }
    Err(Error::NoConvergence {
        iterations: 100,
        residual: f64::NAN,
    })
}

/// Orthonormal basis of the column space, rank decided by `sigma > tol * sigma_max`.
pub fn range_basis(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (u, s) = svd_left(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let r = s.iter().filter(|&&v| v > tol * smax && v > 0.0).count();
    u.columns(0, r).into_owned()
}

/// Orthonormal basis of the column space with exactly `k` columns.
pub fn leading_range_basis(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (u, _) = svd_left(m);
    u.columns(0, k).into_owned()
}

fn svd_left(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    // nalgebra does not sort singular values; do it here so callers can
    // slice leading columns.
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<DVector<f64>> = idx.iter().map(|&i| u.column(i).into_owned()).collect();
    let sorted = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let u = if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    (u, sorted)
}

/// Right singular vectors and singular values, sorted descending.
///
/// Always returns `ncols` singular values (padding with zeros when the matrix
/// has fewer rows than columns).
pub fn svd_right(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = m.ncols();
    // work on the square Gram-free form [m; 0] so that V is n x n
    let mut padded = DMatrix::zeros(m.nrows().max(n), n);
    padded.rows_mut(0, m.nrows()).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<DVector<f64>> = idx.iter().map(|&i| vt.row(i).transpose()).collect();
    let sorted = idx.iter().map(|&i| svd.singular_values[i]).collect();
    (DMatrix::from_columns(&cols), sorted)
}

/// Sorted singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Orthogonal projector onto the span of the (orthonormal) columns.
pub fn orthogonal_projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

/// Orthonormal basis of the orthogonal complement of the column span.
pub fn complement_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let r = basis.ncols();
    if r == 0 {
        return DMatrix::identity(n, n);
    }
    let (v, _) = svd_right(&basis.transpose());
    v.columns(r, n - r).into_owned()
}

/// Largest principal angle between two column spans of equal dimension.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = range_basis(a, 1e-12);
    let qb = range_basis(b, 1e-12);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return if qa.ncols() == qb.ncols() {
            0.0
        } else {
            std::f64::consts::FRAC_PI_2
        };
    }
    let resid = &qa - &qb * (qb.transpose() * &qa);
    let s = singular_values(&resid);
    s.first().copied().unwrap_or(0.0).clamp(0.0, 1.0).asin()
}

/// Least-squares coefficients `c` minimising `|basis * c - v|`, plus the
/// relative residual.
pub fn least_squares(basis: &DMatrix<f64>, v: &DVector<f64>) -> (DVector<f64>, f64) {
    let svd = basis.clone().svd(true, true);
    let c = svd
        .solve(v, 1e-14 * svd.singular_values.max())
        .unwrap_or_else(|_| DVector::zeros(basis.ncols()));
    let resid = (basis * &c - v).norm() / v.norm().max(f64::MIN_POSITIVE);
    (c, resid)
}

/// 2x2 rotation `J = [[0, -1], [1, 0]]`.
pub fn rotation_j() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_diagonal() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0, -3.0]));
        let s = matrix_sign(&j).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, -1.0]));
        assert!((s - expected).norm() < 1e-14);
    }

    #[test]
    fn complement_is_orthogonal() {
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]) / 3.0;
        let c = complement_basis(&b);
        assert_eq!(c.ncols(), 2);
        assert!((b.transpose() * &c).norm() < 1e-14);
        assert!((c.transpose() * &c - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn angle_between_lines() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!((subspace_angle(&a, &b) - std::f64::consts::FRAC_PI_4).abs() < 1e-14);
        assert!(subspace_angle(&a, &(a.clone() * -3.0)) < 1e-15);
    }

    #[test]
    fn svd_right_pads_wide_matrices() {
        let m = DMatrix::from_row_slice(1, 3, &[0.0, 3.0, 4.0]);
        let (v, s) = svd_right(&m);
        assert_eq!(v.shape(), (3, 3));
        assert_eq!(s.len(), 3);
        assert!((s[0] - 5.0).abs() < 1e-14);
        assert!(s[1].abs() < 1e-14 && s[2].abs() < 1e-14);
    }
}
