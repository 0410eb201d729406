//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
///
/// Starts from the all-ones vector perturbed by a fixed ramp so the start is
/// never orthogonal to a coordinate eigenvector. The Rayleigh quotient never
/// overshoots `λ_max`, so the estimate approaches it from below.
pub fn power_iteration(sym: &Matrix, max_iter: usize, tol: f64) -> f64 {
    let d = sym.nrows();
    if d == 0 {
        return 0.0;
    }
    let mut v = Vector::from_fn(d, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = sym * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

/// Spectral norm of a square matrix via power iteration on `MᵀM`.
pub fn spectral_norm(m: &Matrix) -> f64 {
    let gram = m.transpose() * m;
    power_iteration(&gram, 10_000, 1e-15).max(0.0).sqrt()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_on_diagonal() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 1.0, 0.25]));
        assert!((power_iteration(&m, 1000, 1e-15) - 4.0).abs() < 1e-10);
    }

    #[test]
    fn rotation_has_unit_norm() {
        let r = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_norm(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_none());
        let m = from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
    }
}
