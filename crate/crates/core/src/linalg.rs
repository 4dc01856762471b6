//! Small dense helpers on `DMatrix<f64>`: spectral norm, ranks, range bases.

use nalgebra::DMatrix;

pub type Matrix = DMatrix<f64>;

/// Spectral norm (largest singular value).
pub fn op_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn min_singular_value(m: &Matrix) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    m.singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Number of singular values strictly above `threshold`.
pub fn rank(m: &Matrix, threshold: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    m.singular_values().iter().filter(|&&s| s > threshold).count()
}

/// Nonzero singular values of an idempotent matrix are at least 1, so 1/2
/// separates them from roundoff for any reasonably conditioned projection.
pub const PROJECTION_RANK_THRESHOLD: f64 = 0.5;

pub fn projection_rank(p: &Matrix) -> usize {
    rank(p, PROJECTION_RANK_THRESHOLD)
}

/// Orthonormal basis (as columns) of the column space of a projection.
///
/// Taken from the eigenvectors of `P Pᵀ` (eigenvalues `σ²`): the singular
/// vectors nalgebra's SVD returns for some 2×2 inputs do not recompose.
pub fn projection_range_basis(p: &Matrix) -> Matrix {
    let d = p.nrows();
    let eig = (p * p.transpose()).symmetric_eigen();
    let threshold = PROJECTION_RANK_THRESHOLD * PROJECTION_RANK_THRESHOLD;
    let cols: Vec<usize> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| i)
        .collect();
    let mut basis = Matrix::zeros(d, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        basis.set_column(j, &eig.eigenvectors.column(i));
    }
    basis
}

pub fn identity(d: usize) -> Matrix {
    Matrix::identity(d, d)
}

/// `‖P² − P‖`.
pub fn idempotence_defect(p: &Matrix) -> f64 {
    op_norm(&(p * p - p))
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
