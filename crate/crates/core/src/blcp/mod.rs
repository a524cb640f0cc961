//! Boxed linear complementarity problems `l ≤ x ≤ u ⊥ Mx + q`.
//!
//! This is the subproblem of the Josephy–Newton method. The solver works on
//! the activity assignment of each index (at lower bound, at upper bound, or
//! basic) with block principal pivoting, falling back to Murty's single
//! pivot rule when the infeasibility count stalls and to a Lemke-type
//! covering-vector path when pivoting cycles or the basic matrix is singular.

mod block;
mod brute;
mod lemke;
mod log;

use std::path::PathBuf;

pub use brute::{brute_force_blcp, BRUTE_FORCE_MAX_DIM};

use crate::error::{Error, Result};
use crate::mcp::{BoundKind, Bounds, McpProblem};
use crate::sparse::{CsrMatrix, SparseLu};

#[derive(Debug, Clone)]
pub struct BoxedLcp {
    pub m: CsrMatrix,
    pub q: Vec<f64>,
    pub bounds: Bounds,
}

impl BoxedLcp {
    pub fn new(m: CsrMatrix, q: Vec<f64>, bounds: Bounds) -> Result<Self> {
        let n = q.len();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: m.nrows().max(m.ncols()) });
        }
        if bounds.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: bounds.len() });
        }
        if let Some(index) = q.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "q", index });
        }
        if let Some(index) = m.triplets().iter().position(|t| !t.2.is_finite()) {
            return Err(Error::NonFinite { what: "M", index });
        }
        Ok(BoxedLcp { m, q, bounds })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// `w = Mx + q`.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut w = self.m.mul_vec(x);
        w.iter_mut().zip(&self.q).for_each(|(a, b)| *a += b);
        w
    }

    /// Largest violation of the complementarity conditions at `x`.
    pub fn complementarity_error(&self, x: &[f64]) -> f64 {
        let w = self.affine(x);
        let r = crate::mcp::natural_residual_from(&self.bounds, x, &w);
        crate::mcp::norm_inf(&r)
    }
}

impl McpProblem for BoxedLcp {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.affine(x))
    }

    fn jacobian(&self, _x: &[f64]) -> Result<CsrMatrix> {
        Ok(self.m.clone())
    }
}

/// Activity of one index in a pivoting basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activity {
    AtLower,
    AtUpper,
    Basic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlcpStatus {
    Solved,
    RayTermination,
    PivotLimit,
    SingularBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotMethod {
    /// Block pivoting with Lemke fallback.
    #[default]
    Auto,
    BlockOnly,
    LemkeOnly,
}

#[derive(Debug, Clone)]
pub struct BlcpOptions {
    /// Complementarity tolerance, relative to `1 + ‖q‖∞`.
    pub tol: f64,
    pub max_pivots: usize,
    /// Block flips allowed without improving the infeasibility count before
    /// switching to single pivots.
    pub block_patience: usize,
    /// Lemke refactorizes its basis inverse after this many updates.
    pub refactor_every: usize,
    /// Largest bounded subproblem handed to the dense Lemke fallback.
    pub lemke_max_dim: usize,
    pub method: PivotMethod,
    /// Append one line per pivot to this file.
    pub pivot_log: Option<PathBuf>,
}

impl Default for BlcpOptions {
    fn default() -> Self {
        BlcpOptions {
            tol: 1e-10,
            max_pivots: 500,
            block_patience: 3,
            refactor_every: 50,
            lemke_max_dim: 800,
            method: PivotMethod::Auto,
            pivot_log: None,
        }
    }
}

/// Final basis of a solve, reusable as a warm start.
#[derive(Debug)]
pub struct PivotState {
    pub assignment: Vec<Activity>,
    pub pivots: usize,
    pub block_pivots: usize,
    pub single_pivots: usize,
    pub lemke_pivots: usize,
    /// Factorization of the basic system for `assignment`, when available.
    pub factor: Option<SparseLu>,
}

#[derive(Debug)]
pub struct BlcpSolution {
    pub x: Vec<f64>,
    pub status: BlcpStatus,
    pub state: PivotState,
}

/// Assignment consistent with the bound kinds; `Basic` wherever allowed.
pub(crate) fn sanitize(bounds: &Bounds, start: Option<&[Activity]>) -> Vec<Activity> {
    (0..bounds.len())
        .map(|i| {
            let wanted = start.and_then(|s| s.get(i).copied()).unwrap_or(Activity::Basic);
            match (bounds.kind(i), wanted) {
                (BoundKind::Fixed, _) => Activity::AtLower,
                (BoundKind::Free, _) => Activity::Basic,
                (BoundKind::Lower, Activity::AtUpper) => Activity::AtLower,
                (BoundKind::Upper, Activity::AtLower) => Activity::AtUpper,
                (_, a) => a,
            }
        })
        .collect()
}

/// Value an index takes when it is not basic.
pub(crate) fn bound_value(bounds: &Bounds, i: usize, a: Activity) -> f64 {
    match a {
        Activity::AtLower => bounds.lower()[i],
        Activity::AtUpper => bounds.upper()[i],
        Activity::Basic => unreachable!("basic index has no bound value"),
    }
}

pub(crate) fn feasibility_tol(lcp: &BoxedLcp, opts: &BlcpOptions) -> f64 {
    opts.tol * (1.0 + crate::mcp::norm_inf(&lcp.q))
}

pub fn solve_blcp(lcp: &BoxedLcp, start: Option<&[Activity]>, opts: &BlcpOptions) -> BlcpSolution {
    let mut log = log::PivotLog::open(opts.pivot_log.as_deref());
    let assignment = sanitize(&lcp.bounds, start);

    let mut state = PivotState {
        assignment,
        pivots: 0,
        block_pivots: 0,
        single_pivots: 0,
        lemke_pivots: 0,
        factor: None,
    };

    let block_budget = match opts.method {
        PivotMethod::Auto => opts.max_pivots / 2,
        PivotMethod::BlockOnly => opts.max_pivots,
        PivotMethod::LemkeOnly => 0,
    };

    let mut best_x = None;
    if opts.method != PivotMethod::LemkeOnly {
        let out = block::block_pivot(lcp, &mut state, block_budget, opts, &mut log);
        match out {
            block::Outcome::Solved(x) => {
                return BlcpSolution { x: lcp.bounds.project(&x), status: BlcpStatus::Solved, state };
            }
            block::Outcome::Failed { status, x } => {
                if opts.method == PivotMethod::BlockOnly {
                    let x = x.unwrap_or_else(|| lcp.bounds.project(&vec![0.0; lcp.dim()]));
                    return BlcpSolution { x, status, state };
                }
                log.note(&format!("block pivoting stopped ({status:?}); switching to lemke"));
                best_x = x;
            }
        }
    }

    let budget = opts.max_pivots.saturating_sub(state.pivots);
    let (status, x) = lemke::solve_reduced(lcp, &mut state, budget, opts, &mut log);
    let x = match x {
        Some(x) => x,
        None => best_x.unwrap_or_else(|| lcp.bounds.project(&vec![0.0; lcp.dim()])),
    };
    BlcpSolution { x, status, state }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(q: f64) -> BoxedLcp {
        BoxedLcp::new(CsrMatrix::identity(1), vec![q], Bounds::nonnegative(1)).unwrap()
    }

    #[test]
    fn scalar_examples() {
        for method in [PivotMethod::Auto, PivotMethod::LemkeOnly] {
            let opts = BlcpOptions { method, ..Default::default() };
            let s = solve_blcp(&one_d(-1.0), None, &opts);
            assert_eq!(s.status, BlcpStatus::Solved);
            assert!((s.x[0] - 1.0).abs() < 1e-14);
            let s = solve_blcp(&one_d(1.0), None, &opts);
            assert_eq!(s.status, BlcpStatus::Solved);
            assert_eq!(s.x[0], 0.0);
        }
    }

    #[test]
    fn warm_start_takes_no_pivots() {
        let m = CsrMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0), (2, 2, 1.0), (2, 0, -1.0)]);
        let lcp = BoxedLcp::new(m, vec![-1.0, 2.0, 0.5], Bounds::new(vec![0.0; 3], vec![1.0; 3]).unwrap()).unwrap();
        let opts = BlcpOptions::default();
        let first = solve_blcp(&lcp, None, &opts);
        assert_eq!(first.status, BlcpStatus::Solved);
        let again = solve_blcp(&lcp, Some(&first.state.assignment), &opts);
        assert_eq!(again.status, BlcpStatus::Solved);
        assert_eq!(again.state.pivots, 0);
        assert_eq!(again.x, first.x);
    }

    #[test]
    fn free_variables_stay_basic() {
        // x0 free, x1 ≥ 0: x0 + x1 = 1, x1 - x0 + 3 ≥ 0 ⊥ x1 → x0 = 1, x1 = 0 gives w1 = 2
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 1.0)]);
        let b = Bounds::new(vec![f64::NEG_INFINITY, 0.0], vec![f64::INFINITY; 2]).unwrap();
        let lcp = BoxedLcp::new(m, vec![-1.0, 3.0], b).unwrap();
        let s = solve_blcp(&lcp, Some(&[Activity::AtLower, Activity::Basic]), &BlcpOptions::default());
        assert_eq!(s.status, BlcpStatus::Solved);
        assert_eq!(s.state.assignment[0], Activity::Basic);
        assert!((s.x[0] - 1.0).abs() < 1e-14 && s.x[1] == 0.0);
    }

    #[test]
    fn unsolvable_problem_reports_failure() {
        // -x ⊥ x ≥ 0 with q = -1: w = -x - 1 < 0 for every x ≥ 0
        let m = CsrMatrix::from_triplets(1, 1, &[(0, 0, -1.0)]);
        let lcp = BoxedLcp::new(m, vec![-1.0], Bounds::nonnegative(1)).unwrap();
        let s = solve_blcp(&lcp, None, &BlcpOptions::default());
        assert_eq!(s.status, BlcpStatus::RayTermination);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(BoxedLcp::new(CsrMatrix::identity(2), vec![1.0], Bounds::free(1)).is_err());
        assert!(BoxedLcp::new(CsrMatrix::identity(1), vec![f64::NAN], Bounds::free(1)).is_err());
    }

    #[test]
    fn pivot_log_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pivots.log");
        let opts = BlcpOptions { pivot_log: Some(path.clone()), ..Default::default() };
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        let lcp = BoxedLcp::new(m, vec![1.0, -1.0], Bounds::new(vec![0.0; 2], vec![0.5; 2]).unwrap()).unwrap();
        let s = solve_blcp(&lcp, None, &opts);
        assert_eq!(s.status, BlcpStatus::Solved);
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.lines().any(|l| l.starts_with("block")), "{text}");
    }
}
