use super::{MathError, Matrix};

/// Solves `A X = B` for symmetric positive-definite `A` via Cholesky
/// factorization. `B` may carry multiple right-hand-side columns.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix, MathError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(MathError::Shape(format!("cholesky needs square matrix, got {}x{}", a.rows(), a.cols())));
    }
    if b.rows() != n {
        return Err(MathError::Shape(format!("rhs has {} rows, expected {}", b.rows(), n)));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(MathError::NonFiniteIn("cholesky_solve".into()));
    }

    // Lower-triangular factor, row-major.
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(MathError::NotPositiveDefinite { row: i, pivot: sum });
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }

    let k = b.cols();
    let mut x = b.data().to_vec();
    // Forward substitution: L y = B.
    for i in 0..n {
        for c in 0..k {
            let mut sum = x[i * k + c];
            for j in 0..i {
                sum -= l[i * n + j] * x[j * k + c];
            }
            x[i * k + c] = sum / l[i * n + i];
        }
    }
    // Back substitution: L^T x = y.
    for i in (0..n).rev() {
        for c in 0..k {
            let mut sum = x[i * k + c];
            for j in i + 1..n {
                sum -= l[j * n + i] * x[j * k + c];
            }
            x[i * k + c] = sum / l[i * n + i];
        }
    }
    Matrix::from_vec(n, k, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_identity() {
        let b = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = cholesky_solve(&Matrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn solves_spd_system() {
        // A = [[4, 2], [2, 3]], b = [[2], [5]] -> x = [[-0.5], [2.0]]
        let a = Matrix::from_vec(2, 2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![2.0, 5.0]).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        assert!((x.at(0, 0) - -0.5).abs() < 1e-12);
        assert!((x.at(1, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_singular() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            cholesky_solve(&a, &b),
            Err(MathError::NotPositiveDefinite { .. })
        ));
    }
}
