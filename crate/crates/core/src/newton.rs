//! Josephy–Newton method for `0 ∈ F(x) + N_B(x)`.
//!
//! Each iteration linearizes `F` at the current point and solves the boxed
//! LCP `l ≤ z ≤ u ⊥ F(x) + ∇F(x)(z − x)`. Full steps are taken under a
//! watchdog; when the merit `½‖x − mid(l, u, x − F(x))‖²` has not decreased
//! enough within a few steps the iterate returns to the last checkpoint and
//! the step is damped by an Armijo search. A subproblem that block pivoting
//! cannot settle within a few pivots first yields an inexact step from its
//! least infeasible iterate, accepted only under Armijo. When the LCP
//! has no solution, a proximal term `λ(z − x)` is added and `λ` grows
//! geometrically until the subproblem becomes solvable.

use std::time::{Duration, Instant};

use crate::blcp::{solve_blcp, Activity, BlcpOptions, BlcpStatus, BoxedLcp, PivotMethod};
use crate::error::{Error, Result};
use crate::formulation::RegulationSummary;
use crate::mcp::{checked_residual, natural_residual_from, norm_inf, Bounds, McpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Damping {
    None,
    ArmijoOnMerit,
}

#[derive(Debug, Clone)]
pub struct PerturbationSchedule {
    pub initial: f64,
    pub growth: f64,
    pub cap: f64,
}

impl Default for PerturbationSchedule {
    fn default() -> Self {
        PerturbationSchedule { initial: 1e-4, growth: 10.0, cap: 1e3 }
    }
}

impl PerturbationSchedule {
    /// The levels tried after a failed subproblem, in order.
    pub fn levels(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::successors(Some(self.initial), move |l| Some(l * self.growth))
            .take_while(move |&l| l <= self.cap * (1.0 + 1e-12))
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Outer tolerance on the ∞-norm of the natural residual.
    pub tol: f64,
    pub max_iter: usize,
    pub damping: Damping,
    /// Full Newton steps allowed without sufficient decrease before the
    /// iterate returns to the last checkpoint and a line search is done.
    pub nonmonotone_window: usize,
    pub armijo_sigma: f64,
    pub min_step: f64,
    pub perturbation: PerturbationSchedule,
    /// Block pivots tried on each subproblem before settling for an inexact
    /// step from the least infeasible iterate. 0 disables the crash step.
    pub crash_pivots: usize,
    pub subproblem: BlcpOptions,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 50,
            damping: Damping::ArmijoOnMerit,
            nonmonotone_window: 5,
            armijo_sigma: 1e-4,
            min_step: 1e-8,
            perturbation: PerturbationSchedule::default(),
            crash_pivots: 25,
            subproblem: BlcpOptions::default(),
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Diverged,
    IterationLimit,
    SubproblemFailure,
}

/// One accepted outer iteration.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub merit: f64,
    pub residual: f64,
    pub step: f64,
    pub pivots: usize,
    pub perturbation: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    /// ∞-norm of the natural residual at every iterate, starting with `x0`.
    pub residual_history: Vec<f64>,
    pub merit_history: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub wall_time: Duration,
    pub q_order: Option<f64>,
    pub regulation: Option<RegulationSummary>,
    pub message: String,
}

impl SolveReport {
    pub(crate) fn new() -> Self {
        SolveReport {
            status: SolveStatus::IterationLimit,
            iterations: 0,
            residual_history: Vec::new(),
            merit_history: Vec::new(),
            trace: Vec::new(),
            wall_time: Duration::ZERO,
            q_order: None,
            regulation: None,
            message: String::new(),
        }
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }

    /// Number of trailing iterations that took the full Newton step.
    pub fn pure_newton_tail(&self) -> usize {
        self.trace.iter().rev().take_while(|r| r.step == 1.0 && r.perturbation == 0.0).count()
    }
}

/// The Newton subproblem at `x`: `M = ∇F(x)`, `q = F(x) − ∇F(x) x`.
pub fn linearize<P: McpProblem + ?Sized>(problem: &P, x: &[f64], f: &[f64]) -> Result<BoxedLcp> {
    let jac = problem.jacobian(x)?;
    let jx = jac.mul_vec(x);
    let q = f.iter().zip(&jx).map(|(a, b)| a - b).collect();
    BoxedLcp::new(jac, q, problem.bounds().clone())
}

/// The same subproblem in the step `d = z − x`: `M = ∇F(x)`, `q = F(x)`,
/// bounds shifted by `−x`. Pivoting tolerances then scale with `‖F(x)‖`
/// rather than with `‖∇F(x) x‖`, which matters once `F(x)` is small.
pub fn linearize_step<P: McpProblem + ?Sized>(problem: &P, x: &[f64], f: &[f64]) -> Result<BoxedLcp> {
    let b = problem.bounds();
    let lower = b.lower().iter().zip(x).map(|(l, x)| l - x).collect();
    let upper = b.upper().iter().zip(x).map(|(u, x)| u - x).collect();
    BoxedLcp::new(problem.jacobian(x)?, f.to_vec(), Bounds::new(lower, upper)?)
}

/// Proximal perturbation of a linearization anchored at `x`:
/// `M + λI`, `q − λx`, so that `F(x) + (∇F(x) + λI)(z − x)` is modelled.
pub fn perturb(lcp: &BoxedLcp, x: &[f64], level: f64) -> BoxedLcp {
    if level == 0.0 {
        return lcp.clone();
    }
    BoxedLcp {
        m: lcp.m.add_diagonal(level),
        q: lcp.q.iter().zip(x).map(|(q, xi)| q - level * xi).collect(),
        bounds: lcp.bounds.clone(),
    }
}

/// Linearize `problem` at `x` and apply the proximal perturbation `level`.
pub fn perturbed_retry<P: McpProblem + ?Sized>(problem: &P, x: &[f64], level: f64) -> Result<BoxedLcp> {
    let f = checked_residual(problem, x)?;
    Ok(perturb(&linearize(problem, x, &f)?, x, level))
}

fn merit(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    f: Vec<f64>,
    residual: f64,
    merit: f64,
}

fn evaluate<P: McpProblem + ?Sized>(problem: &P, x: Vec<f64>) -> Result<Point> {
    let f = checked_residual(problem, &x)?;
    let r = natural_residual_from(problem.bounds(), &x, &f);
    Ok(Point { residual: norm_inf(&r), merit: merit(&r), x, f })
}

/// Run the method from `x0`. Errors only for unusable input; solver failures
/// are reported through [`SolveReport::status`] together with the last good
/// iterate.
pub fn solve<P: McpProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    if opts.tol <= 0.0 || opts.max_iter == 0 {
        return Err(Error::InvalidConfig("tol must be positive and max_iter at least 1".into()));
    }
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if let Some(index) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "x0", index });
    }

    let bounds = problem.bounds().clone();
    let mut cur = evaluate(problem, bounds.project(x0))?;
    let mut report = SolveReport::new();
    report.residual_history.push(cur.residual);
    report.merit_history.push(cur.merit);
    let mut assignment: Option<Vec<Activity>> = None;
    // watchdog: the last point with sufficient decrease and the number of
    // full steps taken since
    let mut checkpoint = cur.clone();
    let mut since = 0;
    let mut search = false;

    let status = 'outer: loop {
        if cur.residual <= opts.tol {
            break SolveStatus::Converged;
        }
        if report.iterations >= opts.max_iter {
            break SolveStatus::IterationLimit;
        }
        if opts.damping == Damping::ArmijoOnMerit && since >= opts.nonmonotone_window && !search {
            log::debug!("watchdog: back to checkpoint with merit {:.3e}", checkpoint.merit);
            cur = checkpoint.clone();
            since = 0;
            search = true;
        }

        let lcp = match linearize_step(problem, &cur.x, &cur.f) {
            Ok(l) => l,
            Err(e) => {
                report.message = format!("linearization failed: {e}");
                break SolveStatus::Diverged;
            }
        };

        // full steps while the watchdog is running, Armijo from the checkpoint otherwise
        let full_step = opts.damping == Damping::None || (!search && opts.nonmonotone_window > 0);

        // backtrack along the step `dir`; Armijo unless full steps are allowed
        let line_search = |dir: &[f64], full: bool| -> Option<(Point, f64)> {
            let mut t = problem.max_step(&cur.x, dir).clamp(0.0, 1.0);
            while t >= opts.min_step {
                let trial: Vec<f64> = cur.x.iter().zip(dir).map(|(x, d)| x + t * d).collect();
                match evaluate(problem, bounds.project(&trial)) {
                    Ok(p) if full || p.merit <= (1.0 - 2.0 * opts.armijo_sigma * t) * cur.merit => return Some((p, t)),
                    Ok(_) => {}
                    Err(e) => log::debug!("trial point rejected: {e}"),
                }
                if opts.damping == Damping::None {
                    break;
                }
                t *= 0.5;
            }
            None
        };

        let zero = vec![0.0; n];
        let mut accepted = None;
        let mut last_failure = String::new();
        let mut exact = None;
        if opts.crash_pivots > 0 {
            let quick = BlcpOptions { max_pivots: opts.crash_pivots, method: PivotMethod::BlockOnly, ..opts.subproblem.clone() };
            let sol = solve_blcp(&lcp, assignment.as_deref(), &quick);
            if sol.status == BlcpStatus::Solved {
                exact = Some(sol);
            } else if opts.damping == Damping::ArmijoOnMerit {
                if let Some((p, t)) = line_search(&sol.x, false) {
                    log::debug!("crash step after {} pivots", sol.state.pivots);
                    accepted = Some((p, t, 0.0, sol.state.pivots, sol.state.assignment));
                }
            }
        }

        // perturbation level 0 first, then the geometric schedule
        let levels = std::iter::once(0.0).chain(opts.perturbation.levels());
        for level in levels {
            if accepted.is_some() {
                break;
            }
            let sol = match exact.take() {
                Some(sol) => sol,
                None => solve_blcp(&perturb(&lcp, &zero, level), assignment.as_deref(), &opts.subproblem),
            };
            if sol.status != BlcpStatus::Solved {
                last_failure = format!("subproblem {:?} at perturbation {level:.1e}", sol.status);
                log::debug!("{last_failure}");
                continue;
            }
            match line_search(&sol.x, full_step) {
                Some((p, t)) => accepted = Some((p, t, level, sol.state.pivots, sol.state.assignment)),
                None => last_failure = format!("line search failed at perturbation {level:.1e}"),
            }
        }

        let Some((next, t, level, pivots, assign)) = accepted else {
            report.message = last_failure;
            let status = if report.message.starts_with("subproblem") {
                SolveStatus::SubproblemFailure
            } else {
                SolveStatus::Diverged
            };
            break 'outer status;
        };

        report.iterations += 1;
        assignment = Some(assign);
        let rec = IterationRecord {
            iteration: report.iterations,
            merit: next.merit,
            residual: next.residual,
            step: t,
            pivots,
            perturbation: level,
        };
        if opts.verbose {
            log::info!(
                "iter {:3} residual {:.3e} merit {:.3e} step {:.3} pivots {} perturbation {:.1e}",
                rec.iteration, rec.residual, rec.merit, rec.step, rec.pivots, rec.perturbation
            );
        }
        report.trace.push(rec);
        report.residual_history.push(next.residual);
        report.merit_history.push(next.merit);
        if search || next.merit <= (1.0 - 2.0 * opts.armijo_sigma) * checkpoint.merit {
            checkpoint = next.clone();
            since = 0;
        } else {
            since += 1;
        }
        search = false;
        cur = next;
    };
    if status != SolveStatus::Converged && checkpoint.merit < cur.merit {
        cur = checkpoint;
    }

    report.status = status;
    report.q_order = estimate_q_order(&report.residual_history);
    report.wall_time = start.elapsed();
    Ok((cur.x, report))
}

/// Residuals at or below this level are treated as round-off and left out of
/// the rate fit.
pub const Q_ORDER_FLOOR: f64 = 1e-14;

/// Least-squares slope of `log r_{k+1}` against `log r_k` over the strictly
/// decreasing tail of the history. `None` with fewer than four usable points.
pub fn estimate_q_order(history: &[f64]) -> Option<f64> {
    let usable: Vec<f64> = history.iter().copied().filter(|&r| r > Q_ORDER_FLOOR && r.is_finite()).collect();
    let mut start = usable.len();
    while start > 0 && (start == usable.len() || usable[start - 1] > usable[start]) {
        start -= 1;
    }
    let tail = &usable[start..];
    if tail.len() < 4 {
        return None;
    }
    let pts: Vec<(f64, f64)> = tail.windows(2).map(|w| (w[0].ln(), w[1].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcp::{is_solution, Bounds, FnMcp};
    use crate::sparse::CsrMatrix;

    fn square_minus_one() -> impl McpProblem {
        FnMcp::new(
            Bounds::nonnegative(1),
            |x: &[f64]| vec![x[0] * x[0] - 1.0],
            |x: &[f64]| CsrMatrix::from_triplets(1, 1, &[(0, 0, 2.0 * x[0])]),
        )
    }

    #[test]
    fn already_solved_takes_zero_iterations() {
        let (x, rep) = solve(&square_minus_one(), &[1.0], &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        assert_eq!(rep.iterations, 0);
        assert_eq!(x, vec![1.0]);
    }

    #[test]
    fn one_dimensional_quadratic_tail() {
        // hand iteration: x_{k+1} = (x_k^2 + 1) / (2 x_k) from 2 →
        // 1.25, 1.025, 1.0003048780487804, ...; residual min(x, x^2 - 1)
        let opts = SolverOptions { tol: 1e-14, ..Default::default() };
        let (x, rep) = solve(&square_minus_one(), &[2.0], &opts).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        assert!((x[0] - 1.0).abs() < 1e-14);
        let expected = [2.0, 0.5625, 0.050625, 0.0006098490481858398];
        for (r, e) in rep.residual_history.iter().zip(expected) {
            assert!((r - e).abs() < 1e-12 * e.max(1.0), "{r} vs {e}");
        }
        // r_{k+1} / r_k^2 stays bounded (tends to 1/4 since F'' / (2 F') = 1/(2x) · ...)
        for w in rep.residual_history.windows(2) {
            if w[1] > 1e-15 {
                assert!(w[1] / (w[0] * w[0]) < 1.0);
            }
        }
        assert!(rep.trace.iter().all(|r| r.step == 1.0));
    }

    #[test]
    fn q_order_examples() {
        let quad: Vec<f64> = (0..5).map(|k| 10f64.powi(-(1 << k))).collect();
        assert!((estimate_q_order(&quad).unwrap() - 2.0).abs() < 1e-12);
        let lin: Vec<f64> = (1..8).map(|k| 10f64.powi(-k)).collect();
        assert!((estimate_q_order(&lin).unwrap() - 1.0).abs() < 1e-12);
        assert!(estimate_q_order(&[1.0, 0.1, 0.01]).is_none());
        // only the strictly decreasing tail counts
        let mut h = vec![1.0, 2.0, 0.01];
        h.extend(&quad);
        assert!((estimate_q_order(&h).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn perturbation_levels() {
        let m = CsrMatrix::from_triplets(1, 1, &[(0, 0, 0.0)]);
        let lcp = BoxedLcp::new(m, vec![-1.0], Bounds::nonnegative(1)).unwrap();
        let same = perturb(&lcp, &[0.3], 0.0);
        assert_eq!(same.m, lcp.m);
        assert_eq!(same.q, lcp.q);
        let p = perturb(&lcp, &[0.3], 1.0);
        assert_eq!(p.m.get(0, 0), 1.0);
        assert!((p.q[0] + 1.3).abs() < 1e-15);
        let sched = PerturbationSchedule::default();
        let levels: Vec<f64> = sched.levels().collect();
        assert_eq!(levels.len(), 8);
        assert!(levels.windows(2).all(|w| (w[1] / w[0] - 10.0).abs() < 1e-9));
    }

    #[test]
    fn rank_deficient_jacobian_recovers_through_retries() {
        // F(x) = (x0 + x1 - 2, x0 + x1 - 2), both free: the Jacobian has rank 1
        let p = FnMcp::new(
            Bounds::free(2),
            |x: &[f64]| vec![x[0] + x[1] - 2.0, x[0] + x[1] - 2.0],
            |_: &[f64]| CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]),
        );
        let (x, rep) = solve(&p, &[0.0, 0.0], &SolverOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged, "{}", rep.message);
        assert!(is_solution(&p, &x, 1e-8).unwrap());
        let used = PerturbationSchedule::default().levels().take(3).last().unwrap();
        assert!(rep.trace.iter().all(|r| r.perturbation > 0.0 && r.perturbation <= used));
    }

    #[test]
    fn invalid_start_is_an_error() {
        assert!(solve(&square_minus_one(), &[f64::NAN], &SolverOptions::default()).is_err());
        assert!(solve(&square_minus_one(), &[1.0, 2.0], &SolverOptions::default()).is_err());
    }
}
