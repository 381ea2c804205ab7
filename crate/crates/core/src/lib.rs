//! Second-order (bilinear) pooling with matrix-function normalization.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: dense symmetric linear algebra (eigendecomposition,
//!   Lyapunov solves, inverses).
//! * [`matfun`]: matrix square-root, power and logarithm, both exact
//!   (spectral) and iterative (Denman-Beavers, Newton-Schulz).
//! * [`grad`]: backward passes (truncated SVD, Lyapunov, pass-through) and
//!   a finite-difference oracle.
//! * [`layers`]: the pooling / normalization pipeline and a softmax head.
//! * [`train`]: synthetic data, SGD with momentum, evaluation and the
//!   exponent sweep.

// `!(x > 0.0)` is used on purpose so NaN takes the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grad;
pub mod layers;
pub mod linalg;
pub mod matfun;
pub mod random;
pub mod train;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
