use super::matrix::Matrix;
use crate::error::{dim_err, Error, Result};

/// Gauss-Jordan inverse with partial pivoting.
///
/// A pivot at or below `n * eps * max|M|` is reported as singular;
/// `iteration` is carried into the error for callers running an outer
/// iteration.
pub fn invert(m: &Matrix, iteration: usize) -> Result<Matrix> {
    if !m.is_square() {
        return Err(dim_err(
            "square matrix",
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    let floor = n as f64 * f64::EPSILON * m.max_abs();

    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[(r, col)].abs() > a[(pivot, col)].abs() {
                pivot = r;
            }
        }
        let p = a[(pivot, col)];
        if !(p.abs() > floor) {
            return Err(Error::Singular {
                iteration,
                reason: format!("pivot {p:e} in column {col} of a {n}x{n} inverse"),
            });
        }
        if pivot != col {
            for j in 0..n {
                let t = a[(col, j)];
                a[(col, j)] = a[(pivot, j)];
                a[(pivot, j)] = t;
                let t = inv[(col, j)];
                inv[(col, j)] = inv[(pivot, j)];
                inv[(pivot, j)] = t;
            }
        }
        let scale = 1.0 / p;
        for j in 0..n {
            a[(col, j)] *= scale;
            inv[(col, j)] *= scale;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[(r, col)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(r, j)] -= factor * a[(col, j)];
                inv[(r, j)] -= factor * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_permuted_matrix() {
        let m = Matrix::from_rows(&[[0.0, 2.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 4.0]]).unwrap();
        let inv = invert(&m, 0).unwrap();
        let prod = m.matmul(&inv).unwrap();
        assert!(prod.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn singular_reports_iteration() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        match invert(&m, 7) {
            Err(Error::Singular { iteration, .. }) => assert_eq!(iteration, 7),
            other => panic!("unexpected {other:?}"),
        }
    }
}
