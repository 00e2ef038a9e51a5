//! Randomised invariant checks for the conceptor algebra.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conceptor::{max_abs_diff, Conceptor, FeatureBatch};
use crate::error::{Error, Result};
use crate::random::{gaussian_matrix, random_conceptor};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub tolerance: f64,
    /// Largest violation seen; `<= tolerance` passes.
    pub worst: f64,
    pub cases: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgebraReport {
    pub pairs: usize,
    pub max_dim: usize,
    pub seed: u64,
    pub elapsed_secs: f64,
    pub checks: Vec<CheckOutcome>,
}

impl AlgebraReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }
}

struct Tracker {
    checks: Vec<CheckOutcome>,
}

impl Tracker {
    fn record(&mut self, name: &'static str, tolerance: f64, violation: f64) {
        let check = match self.checks.iter_mut().find(|c| c.name == name) {
            Some(c) => c,
            None => {
                self.checks.push(CheckOutcome {
                    name,
                    tolerance,
                    worst: 0.0,
                    cases: 0,
                });
                self.checks.last_mut().unwrap()
            }
        };
        check.cases += 1;
        // NaN must fail
        check.worst = if violation.is_nan() { f64::INFINITY } else { check.worst.max(violation) };
    }
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs_diff(m, &m.transpose())
}

/// Amount by which `a - b` fails to be positive semidefinite.
fn loewner_violation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = a - b;
    let d = (&d + d.transpose()) * 0.5;
    let min = SymmetricEigen::new(d).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    (-min).max(0.0)
}

fn spectrum_violation(c: &Conceptor) -> f64 {
    c.eigenvalues()
        .iter()
        .map(|&s| (-s).max(s - 1.0).max(0.0))
        .fold(0.0, f64::max)
}

/// Runs every algebra invariant on `pairs` random conceptor pairs of dimension
/// `1..=max_dim`. Even-numbered pairs are full rank, odd-numbered pairs have
/// random rank deficiencies.
pub fn algebra_suite(pairs: usize, max_dim: usize, seed: u64) -> Result<AlgebraReport> {
    if pairs == 0 {
        return Err(Error::param("pairs", "must be positive"));
    }
    if max_dim == 0 {
        return Err(Error::param("max_dim", "must be positive"));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker { checks: Vec::new() };

    for p in 0..pairs {
        let n = rng.random_range(1..=max_dim);
        let full = p % 2 == 0;
        let (rc, rb) = if full {
            (n, n)
        } else {
            (rng.random_range(0..=n), rng.random_range(0..=n))
        };
        let c = random_conceptor(n, rc, &mut rng);
        let b = random_conceptor(n, rb, &mut rng);

        let and = c.and(&b)?;
        let or = c.or(&b)?;
        let not = c.not();
        let beta = rng.random_range(0.25..4.0);
        let gamma = rng.random_range(0.25..4.0);
        let ap = c.aperture_adapt(beta)?;

        for m in [&and, &or, &not, &ap] {
            t.record("symmetry", 1e-9, asymmetry(m.matrix()));
            t.record("spectrum in [0,1]", 1e-9, spectrum_violation(m));
        }

        t.record("and below left (C^B <= C)", 1e-8, loewner_violation(c.matrix(), and.matrix()));
        t.record("and below right (C^B <= B)", 1e-8, loewner_violation(b.matrix(), and.matrix()));
        t.record("or above left (C <= CvB)", 1e-8, loewner_violation(or.matrix(), c.matrix()));
        t.record("or above right (B <= CvB)", 1e-8, loewner_violation(or.matrix(), b.matrix()));

        let (cc, cb) = (c.capacity(), b.capacity());
        t.record("capacity of and", 1e-8, (and.capacity() - cc.min(cb)).max(0.0));
        t.record("capacity of or", 1e-8, (cc.max(cb) - or.capacity()).max(0.0));

        let twice = ap.aperture_adapt(gamma)?;
        let once = c.aperture_adapt(beta * gamma)?;
        t.record("aperture group law", 1e-8, max_abs_diff(twice.matrix(), once.matrix()));

        t.record("and commutes", 1e-8, max_abs_diff(and.matrix(), b.and(&c)?.matrix()));
        t.record("not involution", 4.0 * f64::EPSILON, max_abs_diff(c.not().not().matrix(), c.matrix()));
        let demorgan_or = c.not().and(&b.not())?.not();
        t.record("or = not(and(not, not))", 0.0, max_abs_diff(or.matrix(), demorgan_or.matrix()));

        if full {
            let dual = c.not().or(&b.not())?.not();
            t.record("de morgan (invertible)", 1e-7, max_abs_diff(and.matrix(), dual.matrix()));
            let ci = c.matrix().clone().try_inverse();
            let bi = b.matrix().clone().try_inverse();
            if let (Some(ci), Some(bi)) = (ci, bi) {
                let sum = ci + bi - DMatrix::<f64>::identity(n, n);
                if let Some(direct) = sum.try_inverse() {
                    t.record("general and = inverse formula", 1e-8, (and.matrix() - direct).norm());
                }
            }
        }

        let rows = rng.random_range(1..=2 * n);
        let x = gaussian_matrix(rows, n, &mut rng);
        let alpha = rng.random_range(0.5..5.0);
        let built = Conceptor::from_batch(&FeatureBatch::new(x.clone())?, alpha)?;
        let r = x.tr_mul(&x) / rows as f64;
        let mut expected: Vec<f64> = SymmetricEigen::new(r)
            .eigenvalues
            .iter()
            .map(|&l| {
                let l = l.max(0.0);
                l / (l + alpha.powi(-2))
            })
            .collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        let got = built.eigenvalues();
        let gap = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        t.record("construction spectrum", 1e-8, gap);
        t.record("construction below 1", 0.0, got.iter().map(|&s| if s < 1.0 { 0.0 } else { s }).fold(0.0, f64::max));
    }

    Ok(AlgebraReport {
        pairs,
        max_dim,
        seed,
        elapsed_secs: started.elapsed().as_secs_f64(),
        checks: t.checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let r = algebra_suite(60, 8, 11).unwrap();
        for c in &r.checks {
            assert!(c.passed(), "{} worst {:e} > {:e}", c.name, c.worst, c.tolerance);
        }
        assert!(r.checks.iter().any(|c| c.name == "general and = inverse formula" && c.cases > 0));
    }

    #[test]
    fn loewner_violation_detects_order() {
        let a = DMatrix::from_diagonal_element(2, 2, 0.5);
        let b = DMatrix::from_diagonal_element(2, 2, 0.25);
        assert_eq!(loewner_violation(&a, &b), 0.0);
        assert!((loewner_violation(&b, &a) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_empty_suite() {
        assert!(algebra_suite(0, 5, 1).is_err());
        assert!(algebra_suite(5, 0, 1).is_err());
    }
}
