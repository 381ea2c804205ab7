//! Symmetric Lyapunov equation `S X + X S = B`.
//!
//! With `S = U diag(s) U^T` the equation decouples in the eigenbasis:
//! `X~_ij (s_i + s_j) = B~_ij` where `B~ = U^T B U`. This is Bartels-Stewart
//! with the Schur form replaced by the (diagonal) symmetric eigenform.

use super::eig::{sym_eig, SymEig};
use super::matrix::{Matrix, SpdMatrix, SymMatrix};
use crate::error::{dim_err, Error, Result};

/// Relative floor on `sigma_min(S)`; anything at or below
/// `SINGULAR_RTOL * sigma_max` is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-15;

pub fn lyap_solve_sym(s: &SpdMatrix, b: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(s.as_sym())?;
    lyap_solve_eig(&eig, b)
}

/// Solves `S X + X S = B` given the eigendecomposition of `S`.
pub fn lyap_solve_eig(eig_s: &SymEig, b: &SymMatrix) -> Result<SymMatrix> {
    let d = eig_s.dim();
    if b.dim() != d {
        return Err(dim_err(format!("{d}x{d}"), format!("{0}x{0}", b.dim())));
    }
    let s_max = eig_s.max_value();
    let s_min = eig_s.min_value();
    let tolerance = SINGULAR_RTOL * s_max.abs();
    if !(s_min > tolerance) {
        return Err(Error::SingularPencil {
            sigma_min: s_min,
            tolerance,
        });
    }

    let bt = eig_s.to_eigenbasis(b.as_matrix())?;
    let s = &eig_s.values;
    let xt = Matrix::from_fn(d, d, |i, j| bt[(i, j)] / (s[i] + s[j]));
    SymMatrix::symmetrize(&eig_s.from_eigenbasis(&xt)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(s: &SymMatrix, x: &SymMatrix, b: &SymMatrix) -> f64 {
        let sx = s.matmul(x).unwrap();
        let xs = x.matmul(s).unwrap();
        sx.add(&xs).unwrap().sub(b).unwrap().frob_norm() / b.frob_norm()
    }

    #[test]
    fn scaled_identity() {
        let s = SpdMatrix::new(&Matrix::identity(3).scale(2.0), 0.0).unwrap();
        let b = SymMatrix::symmetrize(&Matrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64)).unwrap();
        let x = lyap_solve_sym(&s, &b).unwrap();
        for (xv, bv) in x.as_slice().iter().zip(b.as_slice()) {
            assert!((xv - bv / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn diagonal_pencil() {
        // X_ij = B_ij / (s_i + s_j).
        let s = SpdMatrix::new(&Matrix::from_diag(&[1.0, 2.0]), 0.0).unwrap();
        let b =
            SymMatrix::symmetrize(&Matrix::from_rows(&[[2.0, 3.0], [3.0, 8.0]]).unwrap()).unwrap();
        let x = lyap_solve_sym(&s, &b).unwrap();
        let expected = [1.0, 1.0, 1.0, 2.0];
        for (xv, ev) in x.as_slice().iter().zip(expected) {
            assert!((xv - ev).abs() < 1e-15, "{x:?}");
        }
        assert!(residual(&s, &x, &b) < 1e-15);
    }

    #[test]
    fn singular_pencil_rejected() {
        let s = SpdMatrix::new(&Matrix::from_diag(&[1.0, 0.0]), 0.0).unwrap();
        let b = SymMatrix::identity(2);
        assert!(matches!(
            lyap_solve_sym(&s, &b),
            Err(Error::SingularPencil { .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let s = SpdMatrix::new(&Matrix::identity(2), 0.0).unwrap();
        assert!(matches!(
            lyap_solve_sym(&s, &SymMatrix::identity(3)),
            Err(Error::Dimension { .. })
        ));
    }
}
