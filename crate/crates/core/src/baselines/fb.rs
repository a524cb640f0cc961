use std::time::Instant;

use crate::error::{Error, Result};
use crate::mcp::{checked_residual, BoundKind, McpProblem};
use crate::newton::{IterationRecord, SolveReport, SolveStatus};
use crate::sparse::{CsrMatrix, SparseLu};

/// `φ(a, b) = √(a² + b²) − a − b`; zero exactly when `a ≥ 0`, `b ≥ 0`, `ab = 0`.
pub fn fischer_burmeister(a: f64, b: f64) -> f64 {
    a.hypot(b) - a - b
}

/// An element of the generalized gradient of `φ`; at the kink the limit
/// along `a = b` is used.
fn fb_grad(a: f64, b: f64) -> (f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        let k = std::f64::consts::FRAC_1_SQRT_2 - 1.0;
        (k, k)
    } else {
        (a / r - 1.0, b / r - 1.0)
    }
}

/// Per-row value and the coefficients `c`, `d` of `∇Φ_i = c e_i + d ∇F_i`.
fn row(kind: BoundKind, x: f64, l: f64, u: f64, f: f64) -> (f64, f64, f64) {
    match kind {
        BoundKind::Free => (f, 0.0, 1.0),
        BoundKind::Lower => {
            let (da, db) = fb_grad(x - l, f);
            (fischer_burmeister(x - l, f), da, db)
        }
        BoundKind::Upper => {
            let (da, db) = fb_grad(u - x, -f);
            (fischer_burmeister(u - x, -f), -da, -db)
        }
        BoundKind::Boxed | BoundKind::Fixed => {
            let inner = fischer_burmeister(u - x, -f);
            let (ia, ib) = fb_grad(u - x, -f);
            let (oa, ob) = fb_grad(x - l, inner);
            (fischer_burmeister(x - l, inner), oa - ob * ia, -ob * ib)
        }
    }
}

/// Fischer–Burmeister reformulation of the MCP: free rows keep `F_i`,
/// one-sided rows use `φ(x − l, F)` or `φ(u − x, −F)`, boxed rows the
/// composition `φ(x − l, φ(u − x, −F))`.
pub fn fb_residual<P: McpProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<Vec<f64>> {
    let f = checked_residual(problem, x)?;
    Ok(fb_parts(problem, x, &f).0)
}

fn fb_parts<P: McpProblem + ?Sized>(problem: &P, x: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let b = problem.bounds();
    let (l, u) = (b.lower(), b.upper());
    let n = x.len();
    let (mut phi, mut c, mut d) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        (phi[i], c[i], d[i]) = row(b.kind(i), x[i], l[i], u[i], f[i]);
    }
    (phi, c, d)
}

#[derive(Debug, Clone)]
pub struct FbOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub armijo_sigma: f64,
    pub min_step: f64,
}

impl Default for FbOptions {
    fn default() -> Self {
        FbOptions { tol: 1e-8, max_iter: 500, armijo_sigma: 1e-4, min_step: 1e-12 }
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn half_sq(v: &[f64]) -> f64 {
    0.5 * v.iter().map(|x| x * x).sum::<f64>()
}

/// Semismooth Newton on `Φ(x) = 0` with Armijo damping on `½‖Φ‖²`; falls
/// back to the steepest-descent direction `−∇Φᵀ Φ` when the Newton system
/// is singular or its direction is not a descent direction.
pub fn fb_solve<P: McpProblem + ?Sized>(problem: &P, x0: &[f64], opts: &FbOptions) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if let Some(index) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "x0", index });
    }
    let mut x = x0.to_vec();
    let f = checked_residual(problem, &x)?;
    let (mut phi, mut c, mut d) = fb_parts(problem, &x, &f);
    let mut merit = half_sq(&phi);
    let mut report = SolveReport::new();
    report.residual_history.push(norm_inf(&phi));
    report.merit_history.push(merit);

    report.status = loop {
        if norm_inf(&phi) <= opts.tol {
            break SolveStatus::Converged;
        }
        if report.iterations >= opts.max_iter {
            break SolveStatus::IterationLimit;
        }
        let jf = match problem.jacobian(&x) {
            Ok(j) => j,
            Err(e) => {
                report.message = format!("jacobian failed: {e}");
                break SolveStatus::Diverged;
            }
        };
        // ∇Φ = diag(c) + diag(d) ∇F
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(jf.nnz() + n);
        for i in 0..n {
            t.extend(jf.row(i).map(|(j, v)| (i, j, d[i] * v)));
            t.push((i, i, c[i]));
        }
        let jphi = CsrMatrix::from_triplets(n, n, &t);
        let grad = jphi.transpose().mul_vec(&phi);
        let newton = SparseLu::factor(&jphi).and_then(|lu| {
            let mut r: Vec<f64> = phi.iter().map(|v| -v).collect();
            lu.solve_in_place(&mut r)?;
            Ok(r)
        });
        let dir = match newton {
            Ok(dx) if grad.iter().zip(&dx).map(|(g, s)| g * s).sum::<f64>() < 0.0 => dx,
            _ => grad.iter().map(|g| -g).collect(),
        };
        let slope: f64 = grad.iter().zip(&dir).map(|(g, s)| g * s).sum();

        let mut step = problem.max_step(&x, &dir).clamp(0.0, 1.0);
        let mut accepted = None;
        while step >= opts.min_step {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            if let Ok(ft) = checked_residual(problem, &trial) {
                let parts = fb_parts(problem, &trial, &ft);
                let m = half_sq(&parts.0);
                if m <= merit + opts.armijo_sigma * step * slope {
                    accepted = Some((trial, parts, m));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, parts, m)) = accepted else {
            report.message = "line search failed".into();
            break SolveStatus::Diverged;
        };
        x = xn;
        (phi, c, d) = parts;
        merit = m;
        report.iterations += 1;
        report.trace.push(IterationRecord {
            iteration: report.iterations,
            merit,
            residual: norm_inf(&phi),
            step,
            pivots: 0,
            perturbation: 0.0,
        });
        report.residual_history.push(norm_inf(&phi));
        report.merit_history.push(merit);
    };
    report.q_order = crate::newton::estimate_q_order(&report.residual_history);
    report.wall_time = start.elapsed();
    Ok((x, report))
}
