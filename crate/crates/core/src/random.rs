//! Seeded generators for test and benchmark matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{Matrix, SpdMatrix, SymMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed for a sub-task.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, d: usize) -> SymMatrix {
    SymMatrix::symmetrize(&gaussian_matrix(rng, d, d)).expect("square")
}

/// Haar-ish orthogonal matrix from modified Gram-Schmidt on a Gaussian
/// matrix (two passes for orthogonality to rounding).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Matrix {
    let g = gaussian_matrix(rng, d, d);
    let mut q: Vec<Vec<f64>> = (0..d).map(|j| g.column(j)).collect();
    for j in 0..d {
        for _ in 0..2 {
            for k in 0..j {
                let dot: f64 = q[j].iter().zip(&q[k]).map(|(a, b)| a * b).sum();
                let (head, tail) = q.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= dot * y;
                }
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for x in q[j].iter_mut() {
            *x /= norm;
        }
    }
    Matrix::from_fn(d, d, |i, j| q[j][i])
}

/// `Q diag(spectrum) Q^T` for a random orthogonal `Q`.
pub fn spd_with_spectrum<R: Rng + ?Sized>(rng: &mut R, spectrum: &[f64]) -> SpdMatrix {
    let d = spectrum.len();
    let q = random_orthogonal(rng, d);
    let scaled = Matrix::from_fn(d, d, |i, j| q[(i, j)] * spectrum[j]);
    let a = scaled.matmul(&q.transpose()).expect("square");
    SpdMatrix::new(&a, 0.0).expect("spd by construction")
}

/// Log-uniformly spaced spectrum on `[1/cond, 1]`, endpoints included.
pub fn log_spaced_spectrum(d: usize, cond: f64) -> Vec<f64> {
    if d == 1 {
        return vec![1.0];
    }
    (0..d)
        .map(|i| cond.powf(-(i as f64) / (d - 1) as f64))
        .collect()
}

/// Random SPD matrix with condition number exactly `cond` (largest
/// eigenvalue 1).
pub fn spd_with_cond<R: Rng + ?Sized>(rng: &mut R, d: usize, cond: f64) -> SpdMatrix {
    spd_with_spectrum(rng, &log_spaced_spectrum(d, cond))
}

/// Spectrum with well-separated eigenvalues on `[lo, 1]`: relative gaps are
/// at least `(1 - lo) / (d - 1)`.
pub fn well_separated_spectrum(d: usize, lo: f64) -> Vec<f64> {
    if d == 1 {
        return vec![1.0];
    }
    (0..d)
        .map(|i| 1.0 - (1.0 - lo) * i as f64 / (d - 1) as f64)
        .collect()
}

/// Spectrum made of eigenvalue pairs `(c, c - gap)` with cluster centres
/// spread over `[lo, 1]`; odd `d` gets a trailing singleton.
pub fn clustered_spectrum(d: usize, lo: f64, gap: f64) -> Vec<f64> {
    let centres = d.div_ceil(2);
    let mut out = Vec::with_capacity(d);
    for c in 0..centres {
        let centre = if centres == 1 {
            1.0
        } else {
            1.0 - (1.0 - lo) * c as f64 / (centres - 1) as f64
        };
        out.push(centre);
        if out.len() < d {
            out.push(centre - gap);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_is_orthogonal() {
        let q = random_orthogonal(&mut rng(3), 20);
        let qtq = q.tr_matmul(&q).unwrap();
        assert!(qtq.sub(&Matrix::identity(20)).unwrap().frob_norm() < 1e-13);
    }

    #[test]
    fn spectra_have_requested_shape() {
        let s = log_spaced_spectrum(5, 1e4);
        assert!((s[0] - 1.0).abs() < 1e-15 && (s[4] - 1e-4).abs() < 1e-18);
        let c = clustered_spectrum(5, 0.5, 1e-9);
        assert_eq!(c.len(), 5);
        assert!((c[0] - c[1] - 1e-9).abs() < 1e-15);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }
}
