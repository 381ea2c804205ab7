//! Matrix functions of SPD matrices: exact spectral power / square-root /
//! logarithm, and the two Newton-type square-root iterations.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{invert, sym_eig, Matrix, SpdMatrix, SymEig, SymMatrix};

/// Which spectral function to apply.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MatFunKind {
    /// `A^p`, `p` in `(0, 1]`. `p = 1` is the identity normalization.
    Power(f64),
    /// `A^{1/2}`; numerically the same as `Power(0.5)` but the only kind
    /// with iterative forward passes and the Lyapunov backward pass.
    Sqrt,
    Log,
}

impl MatFunKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MatFunKind::Power(p) if !(p > 0.0 && p <= 1.0) => Err(Error::Config(format!(
                "power exponent must lie in (0, 1], got {p}"
            ))),
            _ => Ok(()),
        }
    }

    /// True for `Power(1)`, which is exactly the identity map.
    pub fn is_identity(&self) -> bool {
        matches!(*self, MatFunKind::Power(p) if p == 1.0)
    }

    /// Scalar function applied to each eigenvalue. Negative rounding noise
    /// is clamped to zero for the power family.
    pub fn apply(&self, sigma: f64) -> f64 {
        match *self {
            MatFunKind::Power(p) => {
                if p == 1.0 {
                    sigma
                } else {
                    sigma.max(0.0).powf(p)
                }
            }
            MatFunKind::Sqrt => sigma.max(0.0).sqrt(),
            MatFunKind::Log => sigma.ln(),
        }
    }

    /// Derivative of [`apply`](Self::apply).
    pub fn derivative(&self, sigma: f64) -> f64 {
        match *self {
            MatFunKind::Power(p) => {
                if p == 1.0 {
                    1.0
                } else {
                    p * sigma.max(0.0).powf(p - 1.0)
                }
            }
            MatFunKind::Sqrt => 0.5 / sigma.max(0.0).sqrt(),
            MatFunKind::Log => 1.0 / sigma,
        }
    }
}

impl fmt::Display for MatFunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatFunKind::Power(p) => write!(f, "power:{p}"),
            MatFunKind::Sqrt => write!(f, "sqrt"),
            MatFunKind::Log => write!(f, "log"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SqrtScheme {
    DenmanBeavers,
    ModifiedNewtonSchulz,
}

/// Pre-scaling applied before iterating.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleMode {
    /// Iterate on `A / ||A||_F` and rescale the result by `||A||_F^{1/2}`.
    FrobeniusNorm,
    /// Iterate on `A / rho` where `rho` estimates `||A||_2` by power
    /// iteration (matrix-vector products only).
    SpectralNorm,
    None,
}

const POWER_ITERATIONS: usize = 30;

/// Power-iteration estimate of the largest eigenvalue of an SPD matrix,
/// floored at `||A||_F / sqrt(d)` (a guaranteed lower bound).
pub fn spectral_norm_estimate(a: &Matrix) -> f64 {
    let d = a.rows();
    if d == 0 {
        return 0.0;
    }
    let frob_floor = a.frob_norm() / (d as f64).sqrt();
    // Fixed, generic start vector so the estimate is deterministic.
    let mut v: Vec<f64> = (0..d)
        .map(|i| 1.0 + 0.5 * ((i as f64) * 0.618_034).fract())
        .collect();
    let mut rho = 0.0f64;
    for _ in 0..POWER_ITERATIONS {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let w: Vec<f64> = (0..d)
            .map(|i| a.row(i).iter().zip(&v).map(|(p, q)| p * q).sum())
            .collect();
        rho = rho.max(v.iter().zip(&w).map(|(p, q)| p * q).sum());
        v = w;
    }
    rho.max(frob_floor)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    pub iterations: usize,
    pub scheme: SqrtScheme,
    pub scale_mode: ScaleMode,
}

impl NewtonConfig {
    pub fn denman_beavers(iterations: usize) -> Self {
        Self {
            iterations,
            scheme: SqrtScheme::DenmanBeavers,
            scale_mode: ScaleMode::None,
        }
    }

    pub fn newton_schulz(iterations: usize) -> Self {
        Self {
            iterations,
            scheme: SqrtScheme::ModifiedNewtonSchulz,
            scale_mode: ScaleMode::FrobeniusNorm,
        }
    }
}

/// Relative residual `||Y_k Y_k - A||_F / ||A||_F` after each iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterTrace {
    pub residuals: Vec<f64>,
}

impl IterTrace {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.residuals.last().copied()
    }
}

pub fn sqrt_residual(y: &Matrix, a: &Matrix) -> Result<f64> {
    let norm = a.frob_norm();
    Ok(y.matmul(y)?.sub(a)?.frob_norm() / norm.max(f64::MIN_POSITIVE))
}

/// `U g(Sigma) U^T` for the spectral function `kind`.
pub fn mat_fun_spectral(a: &SpdMatrix, kind: MatFunKind) -> Result<SymMatrix> {
    kind.validate()?;
    if kind.is_identity() {
        return Ok(a.as_sym().clone());
    }
    let eig = sym_eig(a.as_sym())?;
    mat_fun_from_eig(&eig, kind)
}

/// Applies `kind` to an existing eigendecomposition.
pub fn mat_fun_from_eig(eig: &SymEig, kind: MatFunKind) -> Result<SymMatrix> {
    kind.validate()?;
    if kind == MatFunKind::Log && !(eig.min_value() > 0.0) {
        return Err(Error::Domain(format!(
            "matrix logarithm needs a strictly positive spectrum (smallest eigenvalue {:e}); \
             add a positive epsilon to the diagonal",
            eig.min_value()
        )));
    }
    Ok(eig.reconstruct_with(|s| kind.apply(s)))
}

/// Output of the Denman-Beavers iteration.
#[derive(Clone, Debug)]
pub struct DenmanBeavers {
    /// Approximation of `A^{1/2}`.
    pub sqrt: SymMatrix,
    /// Approximation of `A^{-1/2}`.
    pub inv_sqrt: SymMatrix,
    pub trace: IterTrace,
}

fn scale_factor(a: &SpdMatrix, mode: ScaleMode) -> Result<f64> {
    match mode {
        ScaleMode::None => Ok(1.0),
        ScaleMode::FrobeniusNorm => {
            let norm = a.frob_norm();
            if !(norm > 0.0) {
                return Err(Error::Input("cannot scale a zero matrix".into()));
            }
            Ok(1.0 / norm)
        }
        ScaleMode::SpectralNorm => {
            let rho = spectral_norm_estimate(a.as_matrix());
            if !(rho > 0.0) {
                return Err(Error::Input("cannot scale a zero matrix".into()));
            }
            Ok(1.0 / rho)
        }
    }
}

fn check_scheme(cfg: &NewtonConfig, expected: SqrtScheme) -> Result<()> {
    if cfg.scheme != expected {
        return Err(Error::Config(format!(
            "expected scheme {expected:?}, config has {:?}",
            cfg.scheme
        )));
    }
    Ok(())
}

/// Coupled Denman-Beavers iteration `Y_0 = A, Z_0 = I`,
/// `Y <- (Y + Z^{-1})/2, Z <- (Z + Y^{-1})/2`.
///
/// Zero iterations return `A` and `I` unchanged.
pub fn sqrt_denman_beavers(a: &SpdMatrix, cfg: &NewtonConfig) -> Result<DenmanBeavers> {
    check_scheme(cfg, SqrtScheme::DenmanBeavers)?;
    let d = a.dim();
    if cfg.iterations == 0 {
        return Ok(DenmanBeavers {
            sqrt: a.as_sym().clone(),
            inv_sqrt: SymMatrix::identity(d),
            trace: IterTrace::default(),
        });
    }

    let alpha = scale_factor(a, cfg.scale_mode)?;
    let mut y = a.as_matrix().scale(alpha);
    let mut z = Matrix::identity(d);
    let root_alpha = alpha.sqrt();
    let mut trace = IterTrace::default();
    for k in 0..cfg.iterations {
        let y_inv = invert(&y, k + 1)?;
        let z_inv = invert(&z, k + 1)?;
        y = y.add(&z_inv)?.scale(0.5);
        z = z.add(&y_inv)?.scale(0.5);
        trace
            .residuals
            .push(sqrt_residual(&y.scale(1.0 / root_alpha), a.as_matrix())?);
    }
    Ok(DenmanBeavers {
        sqrt: SymMatrix::symmetrize(&y.scale(1.0 / root_alpha))?,
        inv_sqrt: SymMatrix::symmetrize(&z.scale(root_alpha))?,
        trace,
    })
}

/// Inverse-free Newton-Schulz iteration
/// `T = (3I - Z Y)/2, Y <- Y T, Z <- T Z` started from `Y_0 = alpha A`,
/// `Z_0 = I`.
///
/// Only locally convergent: with [`ScaleMode::None`] the input must
/// satisfy `||A - I||_2 < 1`, otherwise a precondition error carrying the
/// measured norm is returned. Zero iterations return `A` unchanged.
pub fn sqrt_newton_schulz(a: &SpdMatrix, cfg: &NewtonConfig) -> Result<(SymMatrix, IterTrace)> {
    check_scheme(cfg, SqrtScheme::ModifiedNewtonSchulz)?;
    let d = a.dim();
    if cfg.iterations == 0 {
        return Ok((a.as_sym().clone(), IterTrace::default()));
    }
    if cfg.scale_mode == ScaleMode::None {
        let eig = sym_eig(a.as_sym())?;
        let dist = eig
            .values
            .iter()
            .fold(0.0f64, |m, &s| m.max((s - 1.0).abs()));
        if !(dist < 1.0) {
            return Err(Error::Precondition(format!(
                "Newton-Schulz without scaling needs ||A - I||_2 < 1, measured {dist}"
            )));
        }
    }

    let alpha = scale_factor(a, cfg.scale_mode)?;
    let root_alpha = alpha.sqrt();
    let three = Matrix::identity(d).scale(3.0);
    let mut y = a.as_matrix().scale(alpha);
    let mut z = Matrix::identity(d);
    let mut trace = IterTrace::default();
    for _ in 0..cfg.iterations {
        let t = three.sub(&z.matmul(&y)?)?.scale(0.5);
        y = y.matmul(&t)?;
        z = t.matmul(&z)?;
        trace
            .residuals
            .push(sqrt_residual(&y.scale(1.0 / root_alpha), a.as_matrix())?);
    }
    Ok((SymMatrix::symmetrize(&y.scale(1.0 / root_alpha))?, trace))
}

/// Dispatches on `cfg.scheme`.
pub fn sqrt_iterative(a: &SpdMatrix, cfg: &NewtonConfig) -> Result<(SymMatrix, IterTrace)> {
    match cfg.scheme {
        SqrtScheme::DenmanBeavers => {
            let out = sqrt_denman_beavers(a, cfg)?;
            Ok((out.sqrt, out.trace))
        }
        SqrtScheme::ModifiedNewtonSchulz => sqrt_newton_schulz(a, cfg),
    }
}

/// Default number of Taylor terms for [`log_scaling_squaring`].
pub const LOG_TAYLOR_TERMS: usize = 20;
/// Square roots are taken until `||X - I||_F` drops below this.
pub const LOG_CONTRACTION_TARGET: f64 = 0.5;
const LOG_MAX_ROOTS: usize = 60;
const LOG_DB_ITERATIONS: usize = 40;

/// Matrix logarithm by repeated square roots and a Taylor series:
/// `log A = 2^k log(A^{1/2^k})`.
///
/// `roots = 0` chooses `k` automatically as the smallest count for which
/// `||A^{1/2^k} - I||_F < 0.5`. A caller-chosen `k` that leaves
/// `||X - I||_F >= 1` is rejected because the series need not contract.
/// The square roots come from the Denman-Beavers iteration, not from an
/// eigendecomposition.
pub fn log_scaling_squaring(a: &SpdMatrix, roots: usize, taylor_terms: usize) -> Result<SymMatrix> {
    if taylor_terms == 0 {
        return Err(Error::Config("need at least one Taylor term".into()));
    }
    let d = a.dim();
    let identity = Matrix::identity(d);
    let db = NewtonConfig {
        iterations: LOG_DB_ITERATIONS,
        scheme: SqrtScheme::DenmanBeavers,
        scale_mode: ScaleMode::FrobeniusNorm,
    };

    let mut x = a.clone();
    let mut k = 0usize;
    let distance = |x: &SpdMatrix| -> Result<f64> { Ok(x.as_matrix().sub(&identity)?.frob_norm()) };
    if roots == 0 {
        while distance(&x)? >= LOG_CONTRACTION_TARGET {
            if k == LOG_MAX_ROOTS {
                return Err(Error::Config(format!(
                    "no contraction after {LOG_MAX_ROOTS} square roots"
                )));
            }
            x = SpdMatrix::from_sym(sqrt_denman_beavers(&x, &db)?.sqrt, 0.0)?;
            k += 1;
        }
    } else {
        for _ in 0..roots {
            x = SpdMatrix::from_sym(sqrt_denman_beavers(&x, &db)?.sqrt, 0.0)?;
        }
        k = roots;
        let dist = distance(&x)?;
        if !(dist < 1.0) {
            return Err(Error::Config(format!(
                "Taylor series does not contract: ||X - I||_F = {dist} after {roots} square roots"
            )));
        }
    }

    // log(I + E) = sum_{m>=1} (-1)^{m+1} E^m / m, evaluated Horner-style.
    let e = x.as_matrix().sub(&identity)?;
    let mut acc = identity.scale(sign(taylor_terms) / taylor_terms as f64);
    for m in (1..taylor_terms).rev() {
        acc = identity.scale(sign(m) / m as f64).add(&e.matmul(&acc)?)?;
    }
    let log_x = e.matmul(&acc)?;
    SymMatrix::symmetrize(&log_x.scale((1u64 << k) as f64))
}

fn sign(m: usize) -> f64 {
    if m % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}
