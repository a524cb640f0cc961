//! Mixed complementarity problems `l ≤ x ≤ u ⊥ F(x)`.
//!
//! A point solves the problem when, for every component, one of
//!
//! ```text
//!   x_i = l_i        and F_i(x) ≥ 0
//!   l_i ≤ x_i ≤ u_i  and F_i(x) = 0
//!   x_i = u_i        and F_i(x) ≤ 0
//! ```
//!
//! holds. Numerically this is tested through the natural residual
//! `r(x) = x − mid(l, u, x − F(x))`, which vanishes exactly at solutions.
//! Infinite bounds are first class: a component with `l = −∞, u = +∞` is
//! simply an equation `F_i(x) = 0`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::pmatrix::{is_p_matrix, sample_principal_minors};
use crate::sparse::{condest_one_norm, CsrMatrix, SparseLu};

/// Median of `(lo, hi, v)` for `lo ≤ hi`: the projection of `v` onto `[lo, hi]`.
#[inline]
pub fn mid(lo: f64, hi: f64, v: f64) -> f64 {
    v.min(hi).max(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Free,
    Lower,
    Upper,
    Boxed,
    Fixed,
}

/// Box `[l, u]` with extended-real entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        for (index, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::InvalidBounds { index, lower: l, upper: u });
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn free(n: usize) -> Self {
        Bounds { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn nonnegative(n: usize) -> Self {
        Bounds { lower: vec![0.0; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn kind(&self, i: usize) -> BoundKind {
        let (l, u) = (self.lower[i], self.upper[i]);
        match (l.is_finite(), u.is_finite()) {
            (false, false) => BoundKind::Free,
            (true, false) => BoundKind::Lower,
            (false, true) => BoundKind::Upper,
            (true, true) if l == u => BoundKind::Fixed,
            (true, true) => BoundKind::Boxed,
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, &v)| mid(self.lower[i], self.upper[i], v)).collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] - tol && v <= self.upper[i] + tol)
    }
}

/// A square complementarity system over a box.
///
/// Implementations must be re-entrant: the solvers call `residual` and
/// `jacobian` from `&self` and batch drivers share problems across threads.
pub trait McpProblem: Sync {
    fn bounds(&self) -> &Bounds;

    fn dim(&self) -> usize {
        self.bounds().len()
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Sparse Jacobian of `residual`. The pattern must not depend on `x`.
    fn jacobian(&self, x: &[f64]) -> Result<CsrMatrix>;

    fn variable_name(&self, i: usize) -> String {
        format!("x[{i}]")
    }

    /// Largest `t ∈ (0, 1]` such that `x + t·dir` stays in the region where
    /// the model is meaningful (beyond the box). Defaults to no restriction.
    fn max_step(&self, _x: &[f64], _dir: &[f64]) -> f64 {
        1.0
    }
}

/// Problem defined by closures; handy for synthetic instances.
pub struct FnMcp<F, J> {
    bounds: Bounds,
    f: F,
    j: J,
}

impl<F, J> FnMcp<F, J>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
    J: Fn(&[f64]) -> CsrMatrix + Sync,
{
    pub fn new(bounds: Bounds, f: F, j: J) -> Self {
        FnMcp { bounds, f, j }
    }
}

impl<F, J> McpProblem for FnMcp<F, J>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
    J: Fn(&[f64]) -> CsrMatrix + Sync,
{
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.f)(x))
    }

    fn jacobian(&self, x: &[f64]) -> Result<CsrMatrix> {
        Ok((self.j)(x))
    }
}

/// Evaluate `F(x)` with dimension and finiteness checks.
pub fn checked_residual<P: McpProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<Vec<f64>> {
    let n = problem.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "iterate", index });
    }
    let f = problem.residual(x)?;
    if f.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: f.len() });
    }
    if let Some(index) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "residual", index });
    }
    Ok(f)
}

/// `x − mid(l, u, x − F)` for an already evaluated `F`.
pub fn natural_residual_from(bounds: &Bounds, x: &[f64], f: &[f64]) -> Vec<f64> {
    let (l, u) = (bounds.lower(), bounds.upper());
    x.iter()
        .zip(f)
        .enumerate()
        .map(|(i, (&xi, &fi))| {
            if l[i] == f64::NEG_INFINITY && u[i] == f64::INFINITY {
                fi
            } else {
                xi - mid(l[i], u[i], xi - fi)
            }
        })
        .collect()
}

pub fn natural_residual<P: McpProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<Vec<f64>> {
    let f = checked_residual(problem, x)?;
    Ok(natural_residual_from(problem.bounds(), x, &f))
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn is_solution<P: McpProblem + ?Sized>(problem: &P, x: &[f64], tol: f64) -> Result<bool> {
    assert!(tol > 0.0, "tolerance must be positive");
    let r = natural_residual(problem, x)?;
    Ok(norm_inf(&r) <= tol && problem.bounds().contains(x, tol))
}

/// Index sets of a solution: `alpha` interior, `beta` degenerate (at a bound
/// with vanishing `F_i`), `gamma` strictly active.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexPartition {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    pub gamma: Vec<usize>,
}

impl IndexPartition {
    pub fn len(&self) -> usize {
        self.alpha.len() + self.beta.len() + self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const DEFAULT_ACTIVITY_TOL: f64 = 1e-7;

pub fn classify_indices<P: McpProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    activity_tol: f64,
) -> Result<IndexPartition> {
    let f = checked_residual(problem, x)?;
    let bounds = problem.bounds();
    let r = norm_inf(&natural_residual_from(bounds, x, &f));
    if r > activity_tol || !bounds.contains(x, activity_tol) {
        return Err(Error::NotASolution { residual: r, tol: activity_tol });
    }
    let mut part = IndexPartition::default();
    for i in 0..x.len() {
        let at_bound = (x[i] - bounds.lower()[i]).abs() <= activity_tol
            || (bounds.upper()[i] - x[i]).abs() <= activity_tol;
        if !at_bound {
            part.alpha.push(i);
        } else if f[i].abs() <= activity_tol {
            part.beta.push(i);
        } else {
            part.gamma.push(i);
        }
    }
    Ok(part)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularity {
    Regular,
    NotRegular,
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct CertificateOptions {
    /// Largest acceptable 1-norm condition estimate of `∇F_{αα}`.
    pub max_condition: f64,
    /// Largest `|β|` for which all principal minors are checked.
    pub max_exact_beta: usize,
    /// Random minors evaluated when `|β|` exceeds the exact limit.
    pub samples: usize,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions { max_condition: 1e12, max_exact_beta: 20, samples: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct Certificate {
    pub verdict: Regularity,
    /// Condition estimate of the interior block (`None` when `α = ∅`).
    pub condition: Option<f64>,
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    /// Smallest pivot (exact test) or minor (sampled test) of the Schur complement.
    pub schur_min: Option<f64>,
    pub minors_checked: u64,
    pub note: String,
}

/// Sufficient test for strong regularity: `∇F_{αα}` nonsingular and the
/// Schur complement `∇F_{ββ} − ∇F_{βα} ∇F_{αα}⁻¹ ∇F_{αβ}` a P-matrix.
pub fn strong_regularity_certificate<P: McpProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    partition: &IndexPartition,
    opts: &CertificateOptions,
) -> Result<Certificate> {
    let jac = problem.jacobian(x)?;
    let IndexPartition { alpha, beta, gamma } = partition;
    let mut cert = Certificate {
        verdict: Regularity::Regular,
        condition: None,
        alpha: alpha.len(),
        beta: beta.len(),
        gamma: gamma.len(),
        schur_min: None,
        minors_checked: 0,
        note: String::new(),
    };

    let mut schur = jac.submatrix(beta, beta).to_dense();
    if !alpha.is_empty() {
        let faa = jac.submatrix(alpha, alpha);
        let lu = match SparseLu::factor(&faa) {
            Ok(lu) => lu,
            Err(e) => {
                cert.verdict = Regularity::NotRegular;
                cert.condition = Some(f64::INFINITY);
                cert.note = format!("interior block singular: {e}");
                return Ok(cert);
            }
        };
        let cond = match condest_one_norm(&faa, &lu) {
            Ok(c) => c,
            Err(_) => f64::INFINITY,
        };
        cert.condition = Some(cond);
        if cond >= opts.max_condition {
            cert.verdict = Regularity::NotRegular;
            cert.note = format!("interior block ill-conditioned (cond ≈ {cond:.3e})");
            return Ok(cert);
        }
        if !beta.is_empty() {
            let fab = jac.submatrix(alpha, beta);
            let fba = jac.submatrix(beta, alpha).to_dense();
            let mut y = DMatrix::zeros(alpha.len(), beta.len());
            for j in 0..beta.len() {
                let mut col: Vec<f64> = (0..alpha.len()).map(|i| fab.get(i, j)).collect();
                lu.solve_in_place(&mut col)?;
                y.set_column(j, &nalgebra::DVector::from_vec(col));
            }
            schur -= fba * y;
        }
    }

    if beta.is_empty() {
        cert.note = "no degenerate indices; reduced Jacobian invertible".into();
        return Ok(cert);
    }

    let scale = schur.amax().max(1.0);
    if beta.len() <= opts.max_exact_beta {
        let check = is_p_matrix(&schur, 1e-12 * scale);
        cert.schur_min = Some(check.min_pivot);
        cert.minors_checked = check.visited;
        if !check.is_p {
            cert.verdict = Regularity::NotRegular;
            cert.note = "Schur complement has a non-positive principal minor".into();
        }
    } else {
        let (min, n) = sample_principal_minors(&schur, opts.samples, 0x5eed);
        cert.schur_min = Some(min);
        cert.minors_checked = n as u64;
        if min <= 0.0 {
            cert.verdict = Regularity::NotRegular;
            cert.note = "sampled principal minor is non-positive".into();
        } else {
            cert.verdict = Regularity::Inconclusive;
            cert.note = format!("|beta| = {} too large for full enumeration", beta.len());
        }
    }
    Ok(cert)
}
