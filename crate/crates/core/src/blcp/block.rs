use std::collections::HashSet;

use super::log::PivotLog;
use super::{bound_value, feasibility_tol, Activity, BlcpOptions, BlcpStatus, BoxedLcp, PivotState};
use crate::error::{Error, Result};
use crate::mcp::norm_inf;
use crate::sparse::{CsrMatrix, SparseLu};

pub(crate) enum Outcome {
    Solved(Vec<f64>),
    Failed { status: BlcpStatus, x: Option<Vec<f64>> },
}

/// Solve the basic system for one assignment: rows of basic indices satisfy
/// `(Mx + q)_i = 0`, the others pin `x_i` to their bound.
pub(crate) fn solve_assignment(lcp: &BoxedLcp, assign: &[Activity]) -> Result<(Vec<f64>, SparseLu)> {
    let n = lcp.dim();
    let mut t = Vec::with_capacity(lcp.m.nnz() + n);
    let mut rhs = vec![0.0; n];
    for (i, &a) in assign.iter().enumerate() {
        if a == Activity::Basic {
            t.extend(lcp.m.row(i).map(|(j, v)| (i, j, v)));
            rhs[i] = -lcp.q[i];
        } else {
            t.push((i, i, 1.0));
            rhs[i] = bound_value(&lcp.bounds, i, a);
        }
    }
    let k = CsrMatrix::from_triplets(n, n, &t);
    let lu = SparseLu::factor(&k)?;
    let mut x = lu.solve(&rhs)?;

    // one step of iterative refinement, then insist on a small residual
    let kx = k.mul_vec(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
    lu.solve_in_place(&mut r)?;
    x.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
    let kx = k.mul_vec(&x);
    let res = rhs.iter().zip(&kx).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = 1.0 + norm_inf(&rhs) + k.norm_inf() * norm_inf(&x);
    if res > 1e-9 * scale {
        return Err(Error::Singular(format!("basic system residual {res:.3e}")));
    }
    Ok((x, lu))
}

/// Infeasible indices with the size of their violation, in index order.
fn infeasible_set(lcp: &BoxedLcp, assign: &[Activity], x: &[f64], w: &[f64], tol: f64) -> Vec<(usize, f64)> {
    let (l, u) = (lcp.bounds.lower(), lcp.bounds.upper());
    (0..lcp.dim())
        .filter_map(|i| {
            let v = match assign[i] {
                Activity::Basic => (l[i] - x[i]).max(x[i] - u[i]),
                Activity::AtLower if l[i] < u[i] => -w[i],
                Activity::AtUpper if l[i] < u[i] => w[i],
                _ => 0.0,
            };
            (v > tol).then_some((i, v))
        })
        .collect()
}

fn flip(lcp: &BoxedLcp, a: Activity, i: usize, x: &[f64]) -> Activity {
    match a {
        Activity::Basic if x[i] < lcp.bounds.lower()[i] => Activity::AtLower,
        Activity::Basic => Activity::AtUpper,
        _ => Activity::Basic,
    }
}

pub(crate) fn block_pivot(
    lcp: &BoxedLcp,
    state: &mut PivotState,
    budget: usize,
    opts: &BlcpOptions,
    log: &mut PivotLog,
) -> Outcome {
    let tol = feasibility_tol(lcp, opts);
    let mut best = usize::MAX;
    let mut patience = opts.block_patience;
    let mut limit = usize::MAX;
    let mut seen: HashSet<Vec<Activity>> = HashSet::new();
    // fewest infeasibilities seen, handed back on failure
    let mut fewest = usize::MAX;
    let mut best_assign = state.assignment.clone();
    let mut last_x = None;
    let mut used = 0;

    loop {
        let (x, lu) = match solve_assignment(lcp, &state.assignment) {
            Ok(s) => s,
            Err(e) => {
                log.note(&format!("singular basic system: {e}"));
                state.assignment = best_assign;
                return Outcome::Failed { status: BlcpStatus::SingularBasis, x: last_x };
            }
        };
        let w = lcp.affine(&x);
        let bad = infeasible_set(lcp, &state.assignment, &x, &w, tol);
        if bad.is_empty() {
            state.factor = Some(lu);
            return Outcome::Solved(x);
        }
        if bad.len() < fewest {
            fewest = bad.len();
            best_assign.clone_from(&state.assignment);
            last_x = Some(lcp.bounds.project(&x));
        }
        if used >= budget {
            state.assignment = best_assign;
            return Outcome::Failed { status: BlcpStatus::PivotLimit, x: last_x };
        }

        // after `block_patience` non-improving block flips, flip only the most
        // violated half, then a quarter, ... down to Murty's single flips
        if bad.len() < best {
            best = bad.len();
            patience = opts.block_patience;
        } else if patience > 0 {
            patience -= 1;
        } else {
            limit = (limit.min(bad.len()) / 2).max(1);
            patience = opts.block_patience;
        }

        if limit == 1 {
            // Murty's rule: flip only the largest infeasible index
            if !seen.insert(state.assignment.clone()) {
                log.note("assignment revisited; pivoting cycles");
                state.assignment = best_assign;
                return Outcome::Failed { status: BlcpStatus::PivotLimit, x: last_x };
            }
            let i = bad.last().unwrap().0;
            state.assignment[i] = flip(lcp, state.assignment[i], i, &x);
            state.single_pivots += 1;
            log.pivot("single", state.pivots, || format!("index {i} -> {:?} infeasible {}", state.assignment[i], bad.len()));
        } else {
            let mut chosen = bad.clone();
            if chosen.len() > limit {
                chosen.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                chosen.truncate(limit);
            }
            for &(i, _) in &chosen {
                state.assignment[i] = flip(lcp, state.assignment[i], i, &x);
            }
            state.block_pivots += 1;
            if log.enabled() {
                log.pivot("block", state.pivots, || format!("flipped {} infeasible {}", chosen.len(), bad.len()));
            }
        }
        state.pivots += 1;
        used += 1;
    }
}
