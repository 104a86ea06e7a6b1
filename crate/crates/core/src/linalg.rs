//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here works on symmetric matrices: eigenpairs are returned in
//! descending order, and "range" always means the span of eigenvectors whose
//! eigenvalue exceeds `rank_tol * λ_max`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative tolerance below which an eigenvalue counts as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Columns are unit eigenvectors in the same order as `values`.
    pub vectors: Matrix,
}

impl SortedEigen {
    pub fn new(a: &Matrix) -> Self {
        let sym = symmetrize(a);
        let eig = SymmetricEigen::new(sym);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = Matrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Number of eigenvalues strictly above `rank_tol * max(λ_max, 0)`.
    ///
    /// Returns 0 when no eigenvalue is positive.
    pub fn positive_rank(&self, rank_tol: f64) -> usize {
        let top = self.max();
        if top <= 0.0 {
            return 0;
        }
        let cutoff = rank_tol * top;
        self.values.iter().take_while(|&&v| v > cutoff).count()
    }
}

/// `(A + A') / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry of `A - A'`.
pub fn asymmetry(a: &Matrix) -> f64 {
    (a - a.transpose()).amax()
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix,
/// treating eigenvalues below `rank_tol * λ_max` as zero.
pub fn pinv_psd(a: &Matrix, rank_tol: f64) -> Matrix {
    let eig = SortedEigen::new(a);
    let m = eig.positive_rank(rank_tol);
    let n = a.nrows();
    let mut out = Matrix::zeros(n, n);
    for l in 0..m {
        let u = eig.vectors.column(l);
        out += (u * u.transpose()) / eig.values[l];
    }
    out
}

/// Extreme eigenvalues of the pencil `(M, A)` restricted to the positive
/// eigenspace of the symmetric matrix `A`.
///
/// With `A = U Λ U'` over eigenvalues above `rank_tol * λ_max`, this returns
/// the min and max eigenvalue of `Λ^{-1/2} U' M U Λ^{-1/2}`, i.e. the infimum
/// and supremum of `v'Mv / v'Av` over that subspace. `None` when `A` has no
/// positive eigenvalue.
pub fn whitened_extremes(m: &Matrix, a: &Matrix, rank_tol: f64) -> Option<(f64, f64)> {
    let eig = SortedEigen::new(a);
    whitened_extremes_with(m, &eig, rank_tol)
}

/// Same as [`whitened_extremes`] with a precomputed decomposition of `A`.
pub fn whitened_extremes_with(m: &Matrix, eig: &SortedEigen, rank_tol: f64) -> Option<(f64, f64)> {
    let rank = eig.positive_rank(rank_tol);
    if rank == 0 {
        return None;
    }
    let n = eig.vectors.nrows();
    let mut w = Matrix::zeros(n, rank);
    for l in 0..rank {
        let scale = eig.values[l].sqrt().recip();
        w.set_column(l, &(eig.vectors.column(l) * scale));
    }
    let b = w.transpose() * m * &w;
    let b_eig = SortedEigen::new(&b);
    let hi = b_eig.values[0];
    let lo = *b_eig.values.last().unwrap();
    Some((lo, hi))
}

/// `x' A x`.
pub fn quad_form(a: &Matrix, x: &Vector) -> f64 {
    x.dot(&(a * x))
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return None;
    }
    Some(Matrix::from_fn(n, p, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let eig = SortedEigen::new(&a);
        assert_eq!(eig.values, vec![5.0, 3.0, 1.0]);
        let v0 = eig.vectors.column(0);
        assert!((v0[1].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_ignores_tiny_eigenvalues() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 1e-13, 0.0]));
        assert_eq!(SortedEigen::new(&a).positive_rank(DEFAULT_RANK_TOL), 1);
        assert_eq!(SortedEigen::new(&Matrix::zeros(2, 2)).positive_rank(1e-10), 0);
    }

    #[test]
    fn pinv_of_singular_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 0.0]));
        let p = pinv_psd(&a, DEFAULT_RANK_TOL);
        assert!((p[(0, 0)] - 0.25).abs() < 1e-15);
        assert_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn whitening_matches_ratio_on_diagonal_pencil() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.5, 0.0]));
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, 7.0]));
        let (lo, hi) = whitened_extremes(&m, &a, DEFAULT_RANK_TOL).unwrap();
        assert!((lo - 0.5).abs() < 1e-14);
        assert!((hi - 2.0).abs() < 1e-14);
        assert!(whitened_extremes(&m, &Matrix::zeros(3, 3), 1e-10).is_none());
    }
}
