//! Symmetric eigendecomposition: Householder reduction to tridiagonal form
//! followed by the implicit-shift QL iteration (the classic `tred2`/`tql2`
//! pair from EISPACK).

use super::matrix::{Matrix, SymMatrix};
use crate::error::{Error, Result};

/// QL sweeps allowed per eigenvalue before giving up.
const MAX_QL_SWEEPS: usize = 64;

/// Spectral decomposition `A = U diag(values) U^T` of a symmetric matrix.
///
/// `values` are sorted in descending order and column `i` of `vectors` is
/// the unit eigenvector for `values[i]`. Each eigenvector is oriented so
/// that its largest-magnitude component is positive (lowest index wins a
/// tie).
#[derive(Clone, Debug, PartialEq)]
pub struct SymEig {
    pub vectors: Matrix,
    pub values: Vec<f64>,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `U diag(g(sigma_i)) U^T`.
    pub fn reconstruct_with(&self, g: impl Fn(f64) -> f64) -> SymMatrix {
        let d = self.dim();
        let u = &self.vectors;
        let scaled: Vec<f64> = self.values.iter().map(|&s| g(s)).collect();
        let mut out = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let mut acc = 0.0;
                for (k, &s) in scaled.iter().enumerate() {
                    acc += u[(i, k)] * s * u[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        // Exactly symmetric by construction.
        SymMatrix::try_from_symmetric(out).expect("symmetric reconstruction")
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|s| s)
    }

    /// `U^T M U`.
    pub fn to_eigenbasis(&self, m: &Matrix) -> Result<Matrix> {
        self.vectors.tr_matmul(&m.matmul(&self.vectors)?)
    }

    /// `U M U^T`.
    pub fn from_eigenbasis(&self, m: &Matrix) -> Result<Matrix> {
        self.vectors.matmul(&m.matmul(&self.vectors.transpose())?)
    }
}

/// Eigendecomposition of a symmetric matrix.
pub fn sym_eig(a: &SymMatrix) -> Result<SymEig> {
    if !a.is_finite() {
        return Err(Error::Input(
            "eigendecomposition input has non-finite entries".into(),
        ));
    }
    let n = a.dim();
    if n == 0 {
        return Ok(SymEig {
            vectors: Matrix::zeros(0, 0),
            values: Vec::new(),
        });
    }

    let mut v = a.as_matrix().clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    if !tql2(&mut v, &mut d, &mut e) {
        return Err(Error::NoConvergence {
            dim: n,
            norm: a.frob_norm(),
        });
    }

    // tql2 leaves the spectrum unsorted; order it descending.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        // Near-ties (within rounding) resolve to the lowest index.
        let largest = (0..n).fold(0.0f64, |m, r| m.max(v[(r, k)].abs()));
        let pivot = (0..n)
            .find(|&r| v[(r, k)].abs() >= largest * (1.0 - 1e-10))
            .unwrap_or(0);
        let sign = if v[(pivot, k)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, col)] = sign * v[(r, k)];
        }
    }
    Ok(SymEig { vectors, values })
}

/// Householder tridiagonalization. On exit `v` holds the accumulated
/// orthogonal transform, `d` the diagonal and `e[1..]` the subdiagonal.
fn tred2(v: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL on the tridiagonal `(d, e)`, accumulating rotations
/// into `v`. Returns `false` if some eigenvalue fails to converge.
fn tql2(v: &mut Matrix, d: &mut [f64], e: &mut [f64]) -> bool {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }

        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_QL_SWEEPS {
                    return false;
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[(k, i + 1)];
                        v[(k, i + 1)] = s * v[(k, i)] + c * h;
                        v[(k, i)] = c * v[(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    true
}
