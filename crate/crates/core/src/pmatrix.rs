//! P-matrix tests: every principal minor strictly positive.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of the recursive test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PCheck {
    pub is_p: bool,
    /// Smallest leading pivot seen along the recursion. A negative or
    /// near-zero value pinpoints the failing minor's sign.
    pub min_pivot: f64,
    /// Number of recursion leaves visited (one per principal submatrix).
    pub visited: u64,
}

/// Recursive Schur-complement test (Tsatsomeros–Li): `A` is a P-matrix iff
/// `a₁₁ > 0`, `A[2..,2..]` is P and `A/a₁₁` is P. Every principal minor is a
/// product of the pivots on one recursion path, so all `2ⁿ − 1` minors are
/// covered without forming determinants.
pub fn is_p_matrix(a: &DMatrix<f64>, tol: f64) -> PCheck {
    assert!(a.is_square());
    let mut out = PCheck { is_p: true, min_pivot: f64::INFINITY, visited: 0 };
    recurse(a.clone(), tol, &mut out);
    out
}

fn recurse(a: DMatrix<f64>, tol: f64, out: &mut PCheck) {
    let n = a.nrows();
    if n == 0 || !out.is_p {
        return;
    }
    out.visited += 1;
    let pivot = a[(0, 0)];
    out.min_pivot = out.min_pivot.min(pivot);
    if pivot <= tol {
        out.is_p = false;
        return;
    }
    let rest = a.view((1, 1), (n - 1, n - 1)).clone_owned();
    let col = a.view((1, 0), (n - 1, 1)).clone_owned();
    let row = a.view((0, 1), (1, n - 1)).clone_owned();
    let schur = &rest - (&col * &row) / pivot;
    recurse(rest, tol, out);
    recurse(schur, tol, out);
}

/// Evaluate random principal minors by determinant; used for matrices too
/// large for the full test. Returns the smallest minor found.
pub fn sample_principal_minors(a: &DMatrix<f64>, samples: usize, seed: u64) -> (f64, usize) {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min = f64::INFINITY;
    for _ in 0..samples {
        let k = rng.gen_range(1..=n.min(12));
        let idx = sample(&mut rng, n, k).into_vec();
        let sub = DMatrix::from_fn(k, k, |i, j| a[(idx[i], idx[j])]);
        min = min.min(sub.determinant());
    }
    (min, samples)
}
