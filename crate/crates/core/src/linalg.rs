//! Thin helpers over `nalgebra` dynamic types.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub fn vector(values: &[f64]) -> Vector {
    Vector::from_column_slice(values)
}

/// Largest singular value.
pub fn operator_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn symmetric_eigen_range(m: &Matrix) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Row-major nested representation used by the JSON instance schema.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
