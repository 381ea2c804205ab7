//! The normalization pipeline: bilinear pooling, matrix function,
//! elementwise signed square-root and l2 normalization, each with a
//! backward pass, plus a softmax cross-entropy head.

use crate::error::{dim_err, Error, Result};
use crate::grad::{grad_lyapunov, grad_lyapunov_from_eig, grad_svd_with_eig, GradScheme};
use crate::linalg::{sym_eig, Matrix, SpdMatrix, SymEig, SymMatrix};
use crate::matfun::{mat_fun_from_eig, sqrt_iterative, IterTrace, MatFunKind, NewtonConfig};

/// Clamp on `|x|` in the signed square-root derivative.
pub const SIGNED_SQRT_DELTA: f64 = 1e-12;

/// `n` local descriptors of dimension `d`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    values: Matrix,
}

impl FeatureMap {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Input(format!(
                "feature map needs n >= 1 locations and d >= 1 channels, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Input("feature map has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }
}

/// Row indices of `m` in lexicographic (total) order.
fn canonical_row_order(m: &Matrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.sort_by(|&a, &b| {
        m.row(a)
            .iter()
            .zip(m.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// `A = (1/n) sum_i x_i x_i^T + epsilon I`.
///
/// Rows are accumulated in a canonical order, so any permutation of the
/// locations yields a bit-identical matrix.
pub fn bilinear_pool(f: &FeatureMap, epsilon: f64) -> Result<SpdMatrix> {
    if !(epsilon >= 0.0) {
        return Err(Error::Input(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let (n, d) = (f.n(), f.d());
    let x = f.values();
    let mut a = Matrix::zeros(d, d);
    for &r in &canonical_row_order(x) {
        let row = x.row(r);
        for j in 0..d {
            let xj = row[j];
            for k in j..d {
                a[(j, k)] += xj * row[k];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for j in 0..d {
        for k in j..d {
            let v = a[(j, k)] * inv_n;
            a[(j, k)] = v;
            a[(k, j)] = v;
        }
        a[(j, j)] += epsilon;
    }
    SpdMatrix::new(&a, epsilon)
}

/// `dL/dx_i = (2/n) sym(dL/dA) x_i`, returned as an `n x d` matrix.
pub fn bilinear_pool_backward(f: &FeatureMap, dlda: &SymMatrix) -> Result<Matrix> {
    if dlda.dim() != f.d() {
        return Err(dim_err(
            format!("{0}x{0}", f.d()),
            format!("{0}x{0}", dlda.dim()),
        ));
    }
    Ok(f.values().matmul(dlda)?.scale(2.0 / f.n() as f64))
}

pub fn signed_sqrt(m: &Matrix) -> Matrix {
    m.map(|x| x.signum() * x.abs().sqrt())
}

/// `dL/dx = dL/dy / (2 sqrt(max(|x|, delta)))`.
pub fn signed_sqrt_backward(m: &Matrix, dldy: &Matrix) -> Result<Matrix> {
    m.map(|x| 0.5 / x.abs().max(SIGNED_SQRT_DELTA).sqrt())
        .hadamard(dldy)
}

/// `M / ||M||_F`.
pub fn l2_normalize(m: &Matrix) -> Result<Matrix> {
    let norm = m.frob_norm();
    if !(norm > 0.0) {
        return Err(Error::Input(
            "cannot l2-normalize a zero (or non-finite) matrix".into(),
        ));
    }
    Ok(m.scale(1.0 / norm))
}

/// Backward of [`l2_normalize`]: `(G - Y <G, Y>) / ||M||_F`.
pub fn l2_normalize_backward(m: &Matrix, dldy: &Matrix) -> Result<Matrix> {
    let norm = m.frob_norm();
    if !(norm > 0.0) {
        return Err(Error::Input(
            "cannot l2-normalize a zero (or non-finite) matrix".into(),
        ));
    }
    let y = m.scale(1.0 / norm);
    let proj = dldy.dot(&y)?;
    Ok(dldy.sub(&y.scale(proj))?.scale(1.0 / norm))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ForwardMode {
    Spectral,
    /// Square root only.
    Iterative(NewtonConfig),
}

/// Working precision of the pipeline. `Single` rounds every stage's
/// input and output (forward and backward) through `f32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Double,
    Single,
}

impl Precision {
    fn round(&self, m: Matrix) -> Matrix {
        match self {
            Precision::Double => m,
            Precision::Single => m.round_to_single(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub matfun: Option<MatFunKind>,
    pub forward_mode: ForwardMode,
    pub grad_scheme: GradScheme,
    pub use_signed_sqrt: bool,
    pub use_l2: bool,
    pub precision: Precision,
}

impl Default for PipelineConfig {
    /// Matrix square-root (spectral forward, Lyapunov backward), signed
    /// square-root and l2.
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            matfun: Some(MatFunKind::Sqrt),
            forward_mode: ForwardMode::Spectral,
            grad_scheme: GradScheme::Lyapunov,
            use_signed_sqrt: true,
            use_l2: true,
            precision: Precision::Double,
        }
    }
}

impl PipelineConfig {
    /// Pooling followed by signed square-root and l2 only.
    pub fn baseline(epsilon: f64) -> Self {
        Self {
            epsilon,
            matfun: None,
            grad_scheme: GradScheme::PassThrough,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        let Some(kind) = self.matfun else {
            if let ForwardMode::Iterative(_) = self.forward_mode {
                return Err(Error::Config(
                    "iterative forward mode needs the square-root matrix function".into(),
                ));
            }
            return Ok(());
        };
        kind.validate()?;
        if let ForwardMode::Iterative(_) = self.forward_mode {
            if kind != MatFunKind::Sqrt {
                return Err(Error::Config(format!(
                    "iterative forward mode is only available for sqrt, not {kind}"
                )));
            }
        }
        self.grad_scheme.validate_for(kind)
    }
}

/// What the matrix-function stage keeps for its backward pass.
#[derive(Clone, Debug)]
enum MatFunCache {
    Identity,
    Spectral { eig: SymEig },
    Iterative { z: SymMatrix, trace: IterTrace },
}

/// Intermediates of one forward pass, consumed by [`pipeline_backward`].
#[derive(Clone, Debug)]
pub struct PipelineState {
    cfg: PipelineConfig,
    features: FeatureMap,
    pooled: SpdMatrix,
    matfun: MatFunCache,
    /// Input to the signed square-root stage.
    after_matfun: Matrix,
    /// Input to the l2 stage.
    before_l2: Matrix,
}

impl PipelineState {
    pub fn pooled(&self) -> &SpdMatrix {
        &self.pooled
    }

    pub fn iter_trace(&self) -> Option<&IterTrace> {
        match &self.matfun {
            MatFunCache::Iterative { trace, .. } => Some(trace),
            _ => None,
        }
    }

    pub fn eig(&self) -> Option<&SymEig> {
        match &self.matfun {
            MatFunCache::Spectral { eig } => Some(eig),
            _ => None,
        }
    }
}

/// Runs pool, matrix function, signed square-root and l2 (skipping
/// disabled stages) and returns the row-major flattening of the final
/// `d x d` matrix.
pub fn pipeline_forward(f: &FeatureMap, cfg: &PipelineConfig) -> Result<(Vec<f64>, PipelineState)> {
    cfg.validate()?;
    let prec = cfg.precision;
    let features = FeatureMap::new(prec.round(f.values().clone()))?;
    let pooled = bilinear_pool(&features, cfg.epsilon)?;
    let pooled = if prec == Precision::Single {
        SpdMatrix::from_sym(
            SymMatrix::try_from_symmetric(pooled.as_matrix().round_to_single())?,
            cfg.epsilon,
        )?
    } else {
        pooled
    };

    let (matfun, after_matfun) = match cfg.matfun {
        None => (MatFunCache::Identity, pooled.as_matrix().clone()),
        Some(kind) if kind.is_identity() => (MatFunCache::Identity, pooled.as_matrix().clone()),
        Some(kind) => match cfg.forward_mode {
            ForwardMode::Spectral => {
                let eig = sym_eig(pooled.as_sym())?;
                let z = mat_fun_from_eig(&eig, kind)?;
                (MatFunCache::Spectral { eig }, z.into_matrix())
            }
            ForwardMode::Iterative(newton) => {
                let (z, trace) = sqrt_iterative(&pooled, &newton)?;
                let out = z.as_matrix().clone();
                (MatFunCache::Iterative { z, trace }, out)
            }
        },
    };
    let after_matfun = prec.round(after_matfun);

    let before_l2 = if cfg.use_signed_sqrt {
        prec.round(signed_sqrt(&after_matfun))
    } else {
        after_matfun.clone()
    };
    let out = if cfg.use_l2 {
        prec.round(l2_normalize(&before_l2)?)
    } else {
        before_l2.clone()
    };

    let state = PipelineState {
        cfg: *cfg,
        features,
        pooled,
        matfun,
        after_matfun,
        before_l2,
    };
    Ok((out.into_vec(), state))
}

/// Full-chain gradient with respect to the input features (`n x d`).
pub fn pipeline_backward(
    dl_ddescriptor: &[f64],
    state: PipelineState,
    cfg: &PipelineConfig,
) -> Result<Matrix> {
    if *cfg != state.cfg {
        return Err(Error::Config(
            "pipeline state was produced under a different configuration".into(),
        ));
    }
    let prec = cfg.precision;
    let d = state.features.d();
    let g = Matrix::from_vec(d, d, dl_ddescriptor.to_vec())?;

    let g = if cfg.use_l2 {
        prec.round(l2_normalize_backward(&state.before_l2, &g)?)
    } else {
        g
    };
    let g = if cfg.use_signed_sqrt {
        prec.round(signed_sqrt_backward(&state.after_matfun, &g)?)
    } else {
        g
    };
    let g = SymMatrix::symmetrize(&g)?;

    let g = match (&state.matfun, cfg.matfun) {
        (MatFunCache::Identity, _) | (_, None) => g,
        (cache, Some(kind)) => match cfg.grad_scheme {
            GradScheme::PassThrough => g,
            GradScheme::Lyapunov => match cache {
                MatFunCache::Spectral { eig } => grad_lyapunov_from_eig(eig, &g)?,
                MatFunCache::Iterative { z, .. } => grad_lyapunov(&state.pooled, z, &g)?,
                MatFunCache::Identity => unreachable!(),
            },
            GradScheme::SvdTruncated { tau } => {
                let eig = match cache {
                    MatFunCache::Spectral { eig } => eig.clone(),
                    _ => sym_eig(state.pooled.as_sym())?,
                };
                grad_svd_with_eig(eig, kind, &g, tau)?
            }
        },
    };
    let g = SymMatrix::symmetrize(&prec.round(g.into_matrix()))?;
    Ok(prec.round(bilinear_pool_backward(&state.features, &g)?))
}

/// Forward pass of the softmax cross-entropy head.
#[derive(Clone, Debug)]
pub struct XentForward {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Class probabilities, `batch x classes`.
    pub probs: Matrix,
}

#[derive(Clone, Debug)]
pub struct XentGrads {
    /// `classes x (dim + 1)`, bias in the last column.
    pub weights: Matrix,
    /// `batch x dim`.
    pub descriptors: Matrix,
}

/// `logits = [X, 1] W^T` for descriptors `X` (`batch x dim`) and weights
/// `W` (`classes x (dim + 1)`).
pub fn logits(descriptors: &Matrix, weights: &Matrix) -> Result<Matrix> {
    let dim = descriptors.cols();
    if weights.cols() != dim + 1 {
        return Err(dim_err(
            format!("{} weight columns (dim + bias)", dim + 1),
            weights.cols(),
        ));
    }
    let k = weights.rows();
    Ok(Matrix::from_fn(descriptors.rows(), k, |b, c| {
        let w = weights.row(c);
        descriptors
            .row(b)
            .iter()
            .zip(w)
            .map(|(x, wv)| x * wv)
            .sum::<f64>()
            + w[dim]
    }))
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(dim_err(format!("{batch} labels"), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

pub fn softmax_xent_forward(
    descriptors: &Matrix,
    labels: &[usize],
    weights: &Matrix,
) -> Result<XentForward> {
    let batch = descriptors.rows();
    check_labels(labels, batch, weights.rows())?;
    if batch == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let z = logits(descriptors, weights)?;
    let k = weights.rows();
    let mut probs = Matrix::zeros(batch, k);
    let mut loss = 0.0;
    for b in 0..batch {
        let row = z.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        for c in 0..k {
            probs[(b, c)] = (row[c] - log_sum).exp();
        }
        loss += log_sum - row[labels[b]];
    }
    Ok(XentForward {
        loss: loss / batch as f64,
        probs,
    })
}

pub fn softmax_xent_backward(
    descriptors: &Matrix,
    labels: &[usize],
    weights: &Matrix,
    fwd: &XentForward,
) -> Result<XentGrads> {
    let batch = descriptors.rows();
    let dim = descriptors.cols();
    let k = weights.rows();
    check_labels(labels, batch, k)?;
    // dL/dlogits = (p - onehot) / batch
    let mut dz = fwd.probs.scale(1.0 / batch as f64);
    for (b, &l) in labels.iter().enumerate() {
        dz[(b, l)] -= 1.0 / batch as f64;
    }
    let mut gw = Matrix::zeros(k, dim + 1);
    for b in 0..batch {
        let x = descriptors.row(b);
        for c in 0..k {
            let s = dz[(b, c)];
            let row = gw.row_mut(c);
            for (g, &xv) in row.iter_mut().zip(x) {
                *g += s * xv;
            }
            row[dim] += s;
        }
    }
    let gx = Matrix::from_fn(batch, dim, |b, j| {
        (0..k).map(|c| dz[(b, c)] * weights[(c, j)]).sum()
    });
    Ok(XentGrads {
        weights: gw,
        descriptors: gx,
    })
}
