//! Conceptor matrices and their pseudo-Boolean algebra.
//!
//! A conceptor is a symmetric matrix with spectrum in `[0, 1]` that acts as a
//! soft projection onto the subspace occupied by a batch of feature vectors.
//! Every operation here is a pure function of its inputs and returns an
//! explicitly symmetrised result.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold separating the numerical null space from signal.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-9;
const SPECTRUM_TOL: f64 = 1e-9;
const ORTHONORMAL_TOL: f64 = 1e-8;
const SIGN_TOL: f64 = 1e-12;

/// A batch of `b` feature vectors of dimension `n`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    data: DMatrix<f64>,
}

impl FeatureBatch {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Data(format!(
                "feature batch must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "feature batch holds a non-finite entry at flat index {pos}"
            )));
        }
        Ok(Self { data })
    }

    /// Builds a batch from row-major values.
    pub fn from_row_slice(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::param(
                "values",
                format!("expected {} values for {rows}x{cols}, got {}", rows * cols, values.len()),
            ));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, values))
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }
}

/// An `n x k` matrix whose columns are mutually orthonormal. `k` may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    matrix: DMatrix<f64>,
}

impl OrthonormalBasis {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let k = matrix.ncols();
        let gram = matrix.transpose() * &matrix;
        let err = max_abs_diff(&gram, &DMatrix::identity(k, k));
        if err > ORTHONORMAL_TOL {
            return Err(Error::param(
                "basis",
                format!("columns are not orthonormal (max |B^T B - I| = {err:.3e})"),
            ));
        }
        Ok(Self { matrix })
    }

    /// Wraps columns already known to be orthonormal (eigenvectors of a symmetric matrix).
    fn from_trusted(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Orthogonal projector `B B^T` onto the spanned subspace.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.matrix * self.matrix.transpose()
    }
}

/// Symmetric eigendecomposition with a deterministic ordering.
///
/// Eigenpairs are sorted by descending eigenvalue, ties broken by the
/// ascending index of each eigenvector's first non-negligible component,
/// and each eigenvector is signed so that component is positive.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn of(matrix: &DMatrix<f64>) -> Self {
        let sym = symmetrize(matrix);
        let n = sym.nrows();
        let eig = sym.symmetric_eigen();
        let mut vectors = eig.eigenvectors;
        let mut lead = Vec::with_capacity(n);
        for j in 0..n {
            let mut col = vectors.column_mut(j);
            let first = col.iter().position(|v| v.abs() > SIGN_TOL).unwrap_or(n);
            if first < n && col[first] < 0.0 {
                col.neg_mut();
            }
            lead.push(first);
        }
        let values = eig.eigenvalues;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            values[b]
                .partial_cmp(&values[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(lead[a].cmp(&lead[b]))
        });
        let sorted_values = order.iter().map(|&i| values[i]).collect();
        let sorted_vectors = DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
        Self {
            values: sorted_values,
            vectors: sorted_vectors,
        }
    }

    /// Number of eigenvalues above `rel_tol` times the largest one.
    fn rank(&self, rel_tol: f64) -> usize {
        let top = self.values.first().copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 0;
        }
        self.values.iter().filter(|&&v| v > rel_tol * top).count()
    }

    /// `V f(Λ) V^T`, symmetrised.
    fn rebuild(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mapped: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        compose(&self.vectors, &mapped)
    }

    /// Moore-Penrose inverse of the (PSD) matrix this spectrum came from.
    fn pseudo_inverse(&self, rel_tol: f64) -> DMatrix<f64> {
        let k = self.rank(rel_tol);
        let inv: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if i < k { 1.0 / v } else { 0.0 })
            .collect();
        compose(&self.vectors, &inv)
    }
}

/// A conceptor matrix: symmetric with eigenvalues in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConceptorRepr", into = "ConceptorRepr")]
pub struct Conceptor {
    matrix: DMatrix<f64>,
}

impl Conceptor {
    pub fn zero(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_matrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Validates symmetry and spectrum, then stores the symmetrised matrix.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::param(
                "matrix",
                format!("conceptor must be square and non-empty, got {}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("conceptor matrix has non-finite entries".into()));
        }
        let asym = max_abs_diff(&matrix, &matrix.transpose());
        if asym > SYMMETRY_TOL {
            return Err(Error::param("matrix", format!("not symmetric (max |C - C^T| = {asym:.3e})")));
        }
        let matrix = symmetrize(&matrix);
        let spectrum = Spectrum::of(&matrix);
        let lo = spectrum.values.last().copied().unwrap_or(0.0);
        let hi = spectrum.values.first().copied().unwrap_or(0.0);
        if lo < -SPECTRUM_TOL || hi > 1.0 + SPECTRUM_TOL {
            return Err(Error::param(
                "matrix",
                format!("spectrum [{lo:.3e}, {hi:.3e}] leaves [0, 1]"),
            ));
        }
        Ok(Self { matrix })
    }

    fn from_spectrum(spectrum: &Spectrum, f: impl Fn(f64) -> f64) -> Self {
        Self {
            matrix: spectrum.rebuild(|v| f(v).clamp(0.0, 1.0)),
        }
    }

    /// Closed-form minimiser of `|X - XC|_F^2 / b + alpha^-2 |C|_F^2`.
    ///
    /// With `R = X^T X / b = V diag(l) V^T`, the result is
    /// `V diag(l / (l + alpha^-2)) V^T`.
    pub fn from_batch(batch: &FeatureBatch, alpha: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        let x = batch.matrix();
        let corr = x.tr_mul(x) / batch.rows() as f64;
        let reg = alpha.powi(-2);
        let spectrum = Spectrum::of(&corr);
        Ok(Self::from_spectrum(&spectrum, |l| {
            let l = l.max(0.0);
            l / (l + reg)
        }))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum::of(&self.matrix)
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.spectrum().values
    }

    /// `I - C`.
    pub fn not(&self) -> Self {
        let n = self.dim();
        Self {
            matrix: DMatrix::identity(n, n) - &self.matrix,
        }
    }

    /// Generalised AND, valid for singular arguments.
    pub fn and(&self, other: &Self) -> Result<Self> {
        self.and_with_tol(other, DEFAULT_RANK_TOL)
    }

    /// `D (D^T (C^+ + B^+ - I) D)^-1 D^T` where `D` is an orthonormal basis
    /// of the intersection of both column spaces.
    pub fn and_with_tol(&self, other: &Self, rank_tol: f64) -> Result<Self> {
        check_same_dim(self, other)?;
        check_rank_tol(rank_tol)?;
        let n = self.dim();
        let sc = self.spectrum();
        let sb = other.spectrum();
        let basis = intersection_from_spectra(&sc, &sb, rank_tol);
        let k = basis.ncols();
        if k == 0 {
            return Ok(Self::zero(n));
        }
        let mut inner = sc.pseudo_inverse(rank_tol) + sb.pseudo_inverse(rank_tol);
        for i in 0..n {
            inner[(i, i)] -= 1.0;
        }
        let reduced = basis.tr_mul(&(&inner * &basis));
        let reduced = Spectrum::of(&reduced);
        // D W diag(1/v) W^T D^T: the columns of D W are orthonormal, so the
        // spectrum of the result is {1/v} plus zeros and can be clamped directly.
        let rotated = &basis * &reduced.vectors;
        let inv: Vec<f64> = reduced
            .values
            .iter()
            .map(|&v| if v > 0.0 { (1.0 / v).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Ok(Self {
            matrix: compose(&rotated, &inv),
        })
    }

    /// `NOT(NOT C AND NOT B)`.
    pub fn or(&self, other: &Self) -> Result<Self> {
        self.or_with_tol(other, DEFAULT_RANK_TOL)
    }

    pub fn or_with_tol(&self, other: &Self, rank_tol: f64) -> Result<Self> {
        Ok(self.not().and_with_tol(&other.not(), rank_tol)?.not())
    }

    /// Rescales the aperture by `beta`: eigenvalue map `s -> s / (s + beta^-2 (1 - s))`.
    pub fn aperture_adapt(&self, beta: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        let reg = beta.powi(-2);
        Ok(Self::from_spectrum(&self.spectrum(), |s| {
            let s = s.clamp(0.0, 1.0);
            if s >= 1.0 {
                1.0
            } else {
                s / (s + reg * (1.0 - s))
            }
        }))
    }

    /// Mean eigenvalue, `trace(C) / n`.
    pub fn capacity(&self) -> f64 {
        self.matrix.trace() / self.dim() as f64
    }

    /// Eigenvectors for the `k` largest eigenvalues, in descending order.
    pub fn top_k_directions(&self, k: usize) -> Result<OrthonormalBasis> {
        if k == 0 || k > self.dim() {
            return Err(Error::param(
                "k",
                format!("must lie in 1..={}, got {k}", self.dim()),
            ));
        }
        let spectrum = self.spectrum();
        Ok(OrthonormalBasis::from_trusted(spectrum.vectors.columns(0, k).into_owned()))
    }
}

/// Orthonormal basis for the intersection of the column spaces of `c` and `b`.
///
/// Takes the numerical null spaces of both arguments, sums their projectors,
/// and returns the eigenvectors of that sum lying past its numerical rank.
pub fn intersection_basis(c: &Conceptor, b: &Conceptor, rank_tol: f64) -> Result<OrthonormalBasis> {
    check_same_dim(c, b)?;
    check_rank_tol(rank_tol)?;
    Ok(OrthonormalBasis::from_trusted(intersection_from_spectra(
        &c.spectrum(),
        &b.spectrum(),
        rank_tol,
    )))
}

fn intersection_from_spectra(sc: &Spectrum, sb: &Spectrum, rank_tol: f64) -> DMatrix<f64> {
    let n = sc.vectors.nrows();
    let kc = sc.rank(rank_tol);
    let kb = sb.rank(rank_tol);
    let null_c = sc.vectors.columns(kc, n - kc);
    let null_b = sb.vectors.columns(kb, n - kb);
    let sum = null_c * null_c.transpose() + null_b * null_b.transpose();
    let ss = Spectrum::of(&sum);
    let k = ss.rank(rank_tol);
    ss.vectors.columns(k, n - k).into_owned()
}

/// Moore-Penrose inverse of a square matrix from its SVD. Singular values at
/// or below `tol` times the largest one are treated as zero.
///
/// The SVD is read off the symmetric eigenproblem of `[[0, A], [A^T, 0]]`,
/// whose positive eigenvalues are the singular values of `A` with
/// eigenvectors `(u; v) / sqrt(2)`. nalgebra's bidiagonal SVD returns
/// inaccurate factors for some rank-deficient matrices.
pub fn pseudo_inverse(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::param("a", format!("expected a square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("matrix has non-finite entries".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, n), (n, n)).copy_from(a);
    aug.view_mut((n, 0), (n, n)).copy_from(&a.transpose());
    let eig = aug.symmetric_eigen();
    let top = eig.eigenvalues.max();
    let mut out = DMatrix::zeros(n, n);
    for (i, &s) in eig.eigenvalues.iter().enumerate() {
        if top > 0.0 && s > tol * top {
            let x = eig.eigenvectors.column(i);
            out += (x.rows(n, n) * x.rows(0, n).transpose()) * (2.0 / s);
        }
    }
    Ok(out)
}

/// `(A + A^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `Q diag(d) Q^T`, symmetrised. `d` may be shorter than the column count of
/// `q`; missing entries are zero.
fn compose(q: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let k = d.len().min(q.ncols());
    let mut scaled = q.columns(0, k).into_owned();
    for (j, &dj) in d.iter().take(k).enumerate() {
        scaled.column_mut(j).scale_mut(dj);
    }
    symmetrize(&(scaled * q.columns(0, k).transpose()))
}

fn check_positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be a positive finite number, got {value}")))
    }
}

fn check_rank_tol(rank_tol: f64) -> Result<()> {
    if rank_tol > 0.0 && rank_tol < 1.0 {
        Ok(())
    } else {
        Err(Error::param("rank_tol", format!("must lie in (0, 1), got {rank_tol}")))
    }
}

fn check_same_dim(c: &Conceptor, b: &Conceptor) -> Result<()> {
    if c.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::param(
            "conceptor",
            format!("dimension mismatch: {} vs {}", c.dim(), b.dim()),
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct ConceptorRepr {
    dim: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl From<Conceptor> for ConceptorRepr {
    fn from(c: Conceptor) -> Self {
        let dim = c.dim();
        let data = c.matrix.transpose().iter().copied().collect();
        Self { dim, data }
    }
}

impl TryFrom<ConceptorRepr> for Conceptor {
    type Error = Error;

    fn try_from(r: ConceptorRepr) -> Result<Self> {
        if r.data.len() != r.dim * r.dim {
            return Err(Error::Data(format!(
                "conceptor of dim {} needs {} entries, found {}",
                r.dim,
                r.dim * r.dim,
                r.data.len()
            )));
        }
        Conceptor::from_matrix(DMatrix::from_row_slice(r.dim, r.dim, &r.data))
    }
}
