//! Dense symmetric linear algebra.

mod eig;
mod inverse;
mod lyapunov;
mod matrix;

pub use eig::{sym_eig, SymEig};
pub use inverse::invert;
pub use lyapunov::{lyap_solve_eig, lyap_solve_sym, SINGULAR_RTOL};
pub use matrix::{frob_norm, mat_mul, sym_part, Matrix, SpdMatrix, SymMatrix};
