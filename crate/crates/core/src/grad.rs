//! Backward passes through the matrix-function layer and the
//! finite-difference oracle used to check them.
//!
//! All gradients use the full-matrix convention on the symmetric subspace:
//! for a symmetric perturbation `dA` the loss changes by `<G, dA>` where
//! `G` is the returned (symmetric) gradient.

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{lyap_solve_eig, sym_eig, Matrix, SpdMatrix, SymEig, SymMatrix};
use crate::matfun::{mat_fun_from_eig, MatFunKind};
use crate::random;

/// Default relative truncation threshold for [`GradScheme::SvdTruncated`].
pub const DEFAULT_TAU: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradScheme {
    /// Spectral (SVD) gradient with eigen-dependent terms truncated below
    /// `tau * sigma_max`.
    SvdTruncated { tau: f64 },
    /// Exact square-root gradient from a Lyapunov solve. Sqrt only.
    Lyapunov,
    /// Treat the matrix function as the identity in the backward pass.
    PassThrough,
}

impl GradScheme {
    pub fn validate_for(&self, kind: MatFunKind) -> Result<()> {
        match *self {
            GradScheme::SvdTruncated { tau } if !(tau > 0.0 && tau.is_finite()) => Err(
                Error::Config(format!("truncation threshold must be positive, got {tau}")),
            ),
            GradScheme::Lyapunov if kind != MatFunKind::Sqrt => Err(Error::Config(format!(
                "Lyapunov gradients are only defined for the square root, not {kind}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Everything the spectral gradient needs besides the upstream gradient.
///
/// `k` holds `1/(sigma_i - sigma_j)` off the diagonal. Truncated indices
/// (`sigma_i <= tau * sigma_max`) have their `k` row and column and their
/// `gprime` entry zeroed. Pairs of active indices closer than
/// `tau * sigma_max` also get `k_ij = 0`; their coupling is carried by the
/// derivative limit in `pair_limit` instead.
#[derive(Clone, Debug)]
pub struct SvdGradWorkspace {
    pub eig: SymEig,
    pub k: Matrix,
    pub g: Vec<f64>,
    pub gprime: Vec<f64>,
    pub active_mask: Vec<bool>,
    pub pair_limit: Matrix,
}

impl SvdGradWorkspace {
    /// `tau = 0` disables both truncation rules.
    pub fn new(eig: SymEig, kind: MatFunKind, tau: f64) -> Self {
        let d = eig.dim();
        let sigma = &eig.values;
        let threshold = tau * eig.max_value().abs();
        let active_mask: Vec<bool> = sigma.iter().map(|&s| tau == 0.0 || s > threshold).collect();
        let g: Vec<f64> = sigma.iter().map(|&s| kind.apply(s)).collect();
        let gprime: Vec<f64> = sigma
            .iter()
            .zip(&active_mask)
            .map(|(&s, &on)| if on { kind.derivative(s) } else { 0.0 })
            .collect();

        let mut k = Matrix::zeros(d, d);
        let mut pair_limit = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                if i == j || !active_mask[i] || !active_mask[j] {
                    continue;
                }
                let diff = sigma[i] - sigma[j];
                if tau > 0.0 && diff.abs() <= threshold {
                    pair_limit[(i, j)] = 0.5 * (gprime[i] + gprime[j]);
                } else {
                    k[(i, j)] = 1.0 / diff;
                }
            }
        }
        Self {
            eig,
            k,
            g,
            gprime,
            active_mask,
            pair_limit,
        }
    }

    /// `dL/dA = U { sym(K^T o (U^T dL/dU)) + diag(dL/dSigma) } U^T` with
    /// `dL/dU = (G + G^T) U g(Sigma)` and `dL/dSigma = g'(Sigma) U^T G U`.
    pub fn backward(&self, dldz: &SymMatrix) -> Result<SymMatrix> {
        let d = self.eig.dim();
        if dldz.dim() != d {
            return Err(dim_err(format!("{d}x{d}"), format!("{0}x{0}", dldz.dim())));
        }
        // U^T G U
        let m = self.eig.to_eigenbasis(dldz.as_matrix())?;
        // U^T dL/dU = U^T (G + G^T) U g(Sigma) = 2 M g(Sigma)
        let ut_dldu = Matrix::from_fn(d, d, |i, j| 2.0 * m[(i, j)] * self.g[j]);
        let mut inner = Matrix::from_fn(d, d, |i, j| self.k[(j, i)] * ut_dldu[(i, j)]);
        for i in 0..d {
            inner[(i, i)] += self.gprime[i] * m[(i, i)];
            for j in 0..d {
                if self.pair_limit[(i, j)] != 0.0 {
                    inner[(i, j)] += self.pair_limit[(i, j)] * m[(i, j)];
                }
            }
        }
        let inner = SymMatrix::symmetrize(&inner)?;
        SymMatrix::symmetrize(&self.eig.from_eigenbasis(&inner)?)
    }
}

/// Spectral (SVD) gradient of `Z = f(A)`.
///
/// Near-degenerate spectra never raise: truncated terms are dropped and
/// near-equal active pairs fall back to the derivative limit.
pub fn grad_svd(a: &SpdMatrix, kind: MatFunKind, dldz: &SymMatrix, tau: f64) -> Result<SymMatrix> {
    let eig = sym_eig(a.as_sym())?;
    grad_svd_with_eig(eig, kind, dldz, tau)
}

pub fn grad_svd_with_eig(
    eig: SymEig,
    kind: MatFunKind,
    dldz: &SymMatrix,
    tau: f64,
) -> Result<SymMatrix> {
    kind.validate()?;
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("tau must be >= 0, got {tau}")));
    }
    SvdGradWorkspace::new(eig, kind, tau).backward(dldz)
}

/// Square-root gradient from `Z dL/dA + dL/dA Z = dL/dZ`.
pub fn grad_lyapunov(a: &SpdMatrix, z: &SymMatrix, dldz: &SymMatrix) -> Result<SymMatrix> {
    if a.dim() != z.dim() {
        return Err(dim_err(
            format!("{0}x{0}", a.dim()),
            format!("{0}x{0}", z.dim()),
        ));
    }
    let eig_z = sym_eig(z)?;
    lyap_solve_eig(&eig_z, dldz)
}

/// Lyapunov gradient when the eigendecomposition of `A` is already known
/// (the eigenvectors of `A^{1/2}` are those of `A`).
pub fn grad_lyapunov_from_eig(eig_a: &SymEig, dldz: &SymMatrix) -> Result<SymMatrix> {
    let eig_z = SymEig {
        vectors: eig_a.vectors.clone(),
        values: eig_a.values.iter().map(|&s| s.max(0.0).sqrt()).collect(),
    };
    lyap_solve_eig(&eig_z, dldz)
}

pub fn grad_pass_through(dldz: &SymMatrix) -> SymMatrix {
    dldz.clone()
}

/// Central finite differences on symmetric coordinate pairs.
///
/// Off-diagonal `(i, j)` and `(j, i)` move together by `+-h/2` each, a
/// diagonal entry by `+-h`, so the estimate matches the full-matrix
/// gradient convention.
pub fn finite_diff_grad<F>(mut f: F, a: &SymMatrix, h: f64) -> Result<SymMatrix>
where
    F: FnMut(&SymMatrix) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Input(format!("step must be positive, got {h}")));
    }
    let d = a.dim();
    let mut grad = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut plus = a.as_matrix().clone();
            let mut minus = a.as_matrix().clone();
            if i == j {
                plus[(i, i)] += h;
                minus[(i, i)] -= h;
            } else {
                plus[(i, j)] += h / 2.0;
                plus[(j, i)] += h / 2.0;
                minus[(i, j)] -= h / 2.0;
                minus[(j, i)] -= h / 2.0;
            }
            let fp = f(&SymMatrix::try_from_symmetric(plus)?);
            let fm = f(&SymMatrix::try_from_symmetric(minus)?);
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            let g = (fp - fm) / (2.0 * h);
            grad[(i, j)] = g;
            grad[(j, i)] = g;
        }
    }
    SymMatrix::try_from_symmetric(grad)
}

/// Comparison between an analytic gradient and a finite-difference
/// estimate. `max_rel_diff` is `max_abs_diff / max|fd|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub analytic_norm: f64,
    pub fd_norm: f64,
    pub worst_entry: (usize, usize),
}

impl GradReport {
    pub fn compare(analytic: &Matrix, fd: &Matrix) -> Result<Self> {
        let diff = analytic.sub(fd)?;
        let mut worst = (0, 0);
        let mut max_abs = 0.0f64;
        let mut any_nan = false;
        for i in 0..diff.rows() {
            for j in 0..diff.cols() {
                let v = diff[(i, j)].abs();
                if v.is_nan() {
                    if !any_nan {
                        worst = (i, j);
                    }
                    any_nan = true;
                } else if !any_nan && v > max_abs {
                    max_abs = v;
                    worst = (i, j);
                }
            }
        }
        if any_nan {
            max_abs = f64::NAN;
        }
        let scale = fd.max_abs().max(f64::MIN_POSITIVE);
        Ok(Self {
            max_abs_diff: max_abs,
            max_rel_diff: max_abs / scale,
            analytic_norm: analytic.frob_norm(),
            fd_norm: fd.frob_norm(),
            worst_entry: worst,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.max_abs_diff.is_finite()
            && self.max_rel_diff.is_finite()
            && self.analytic_norm.is_finite()
            && self.fd_norm.is_finite()
    }
}

/// Seed of the probe-loss weights used by [`grad_check`].
pub const PROBE_SEED: u64 = 0x9E0B_E5EE_D000_0001;

/// Weights `W` of the linear probe loss `L(Z) = sum_ij W_ij Z_ij`.
pub fn probe_weights(d: usize, seed: u64) -> Matrix {
    let mut rng = random::rng(seed);
    Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))
}

/// Analytic gradient of `f(A)` under `scheme`, for upstream `dldz`.
pub fn analytic_grad(
    a: &SpdMatrix,
    kind: MatFunKind,
    scheme: GradScheme,
    dldz: &SymMatrix,
) -> Result<SymMatrix> {
    scheme.validate_for(kind)?;
    match scheme {
        GradScheme::SvdTruncated { tau } => grad_svd(a, kind, dldz, tau),
        GradScheme::Lyapunov => {
            let eig = sym_eig(a.as_sym())?;
            let z = mat_fun_from_eig(&eig, MatFunKind::Sqrt)?;
            grad_lyapunov(a, &z, dldz)
        }
        GradScheme::PassThrough => Ok(grad_pass_through(dldz)),
    }
}

/// Checks `scheme` against central differences on the probe loss
/// `L(Z) = <W, f(A)>`. Numerical failures of the analytic path show up as
/// non-finite report fields rather than errors; only invalid
/// `(kind, scheme)` combinations are rejected.
pub fn grad_check(
    kind: MatFunKind,
    scheme: GradScheme,
    a: &SpdMatrix,
    h: f64,
) -> Result<GradReport> {
    scheme.validate_for(kind)?;
    let d = a.dim();
    let w = probe_weights(d, PROBE_SEED);
    let dldz = SymMatrix::symmetrize(&w)?;

    let analytic = match analytic_grad(a, kind, scheme, &dldz) {
        Ok(g) => g.into_matrix(),
        Err(_) => Matrix::from_fn(d, d, |_, _| f64::NAN),
    };
    let probe = |x: &SymMatrix| -> f64 {
        let z = sym_eig(x).and_then(|eig| mat_fun_from_eig(&eig, kind));
        match z {
            Ok(z) => w.dot(&z).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    };
    let fd = match finite_diff_grad(probe, a.as_sym(), h) {
        Ok(g) => g.into_matrix(),
        Err(_) => Matrix::from_fn(d, d, |_, _| f64::NAN),
    };
    GradReport::compare(&analytic, &fd)
}
