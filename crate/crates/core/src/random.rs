//! Random matrix generators for synthetic data and property checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conceptor::Conceptor;

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar-ish random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn orthogonal_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let qr = gaussian_matrix(n, n, rng).qr();
    let (q, r) = qr.unpack();
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random conceptor of dimension `n` with exactly `rank` non-zero eigenvalues
/// drawn uniformly from `[0.05, 0.95]`, in a random orthonormal frame.
pub fn random_conceptor<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> Conceptor {
    assert!(rank <= n, "rank {rank} exceeds dimension {n}");
    let q = orthogonal_matrix(n, rng);
    let mut diag = vec![0.0; n];
    for d in diag.iter_mut().take(rank) {
        *d = rng.random_range(0.05..0.95);
    }
    let m = &q * DMatrix::from_diagonal(&DVector::from_vec(diag)) * q.transpose();
    Conceptor::from_matrix((&m + m.transpose()) * 0.5).expect("valid by construction")
}
