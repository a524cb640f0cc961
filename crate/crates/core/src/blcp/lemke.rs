//! Lemke-type complementary pivoting for the boxed problem.
//!
//! Free variables are eliminated first through a Schur complement, leaving a
//! dense problem over the bounded indices. That problem is augmented with a
//! covering vector `d` and an artificial variable `t ≥ 0`,
//!
//! ```text
//!   w = S x + q̃ + t d,
//! ```
//!
//! and the complementary path is followed from the point where every index
//! sits at a bound until `t` leaves the basis (solution) or the entering
//! variable is unblocked (ray termination).

use nalgebra::{DMatrix, DVector};

use super::log::PivotLog;
use super::{feasibility_tol, Activity, BlcpOptions, BlcpStatus, BoxedLcp, PivotState};
use crate::mcp::BoundKind;
use crate::sparse::SparseLu;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    X(usize),
    W(usize),
    T,
}

pub(crate) struct DenseResult {
    pub status: BlcpStatus,
    pub x: Vec<f64>,
    pub modes: Vec<Activity>,
    pub pivots: usize,
}

/// Run Lemke on the bounded part of `lcp`. Returns `None` when the reduced
/// problem would exceed the dense size limit.
pub(crate) fn solve_reduced(
    lcp: &BoxedLcp,
    state: &mut PivotState,
    budget: usize,
    opts: &BlcpOptions,
    log: &mut PivotLog,
) -> (BlcpStatus, Option<Vec<f64>>) {
    let n = lcp.dim();
    let b = &lcp.bounds;
    let mut free = Vec::new();
    let mut fixed = Vec::new();
    let mut bounded = Vec::new();
    for i in 0..n {
        match b.kind(i) {
            BoundKind::Free => free.push(i),
            BoundKind::Fixed => fixed.push(i),
            _ => bounded.push(i),
        }
    }
    if bounded.len() > opts.lemke_max_dim {
        log.note(&format!("reduced problem of size {} exceeds lemke limit", bounded.len()));
        return (BlcpStatus::PivotLimit, None);
    }

    let mut x = vec![0.0; n];
    for &i in &fixed {
        x[i] = b.lower()[i];
    }

    // q_F + M_FX x_X and the fixed-column contribution to the bounded rows
    let fixed_contrib = |rows: &[usize]| -> Vec<f64> {
        rows.iter()
            .map(|&i| {
                lcp.q[i] + fixed.iter().map(|&j| lcp.m.get(i, j) * x[j]).sum::<f64>()
            })
            .collect()
    };
    let c_free = fixed_contrib(&free);
    let c_bounded = fixed_contrib(&bounded);

    let nf = free.len();
    let nr = bounded.len();
    let mut s = lcp.m.submatrix(&bounded, &bounded).to_dense();
    let mut qt = DVector::from_vec(c_bounded);
    let mut z = DMatrix::zeros(nf, nr);
    let mut z0 = vec![0.0; nf];
    if nf > 0 {
        let lu = match SparseLu::factor(&lcp.m.submatrix(&free, &free)) {
            Ok(lu) => lu,
            Err(e) => {
                log.note(&format!("free block singular: {e}"));
                return (BlcpStatus::SingularBasis, None);
            }
        };
        let mfr = lcp.m.submatrix(&free, &bounded);
        let mrf = lcp.m.submatrix(&bounded, &free).to_dense();
        for j in 0..nr {
            let mut col: Vec<f64> = (0..nf).map(|i| mfr.get(i, j)).collect();
            if lu.solve_in_place(&mut col).is_err() {
                return (BlcpStatus::SingularBasis, None);
            }
            z.set_column(j, &DVector::from_vec(col));
        }
        z0 = c_free.clone();
        if lu.solve_in_place(&mut z0).is_err() {
            return (BlcpStatus::SingularBasis, None);
        }
        s -= &mrf * &z;
        qt -= &mrf * DVector::from_column_slice(&z0);
    }

    let lo: Vec<f64> = bounded.iter().map(|&i| b.lower()[i]).collect();
    let hi: Vec<f64> = bounded.iter().map(|&i| b.upper()[i]).collect();
    let tol = feasibility_tol(lcp, opts);
    let res = lemke_dense(&s, &qt, &lo, &hi, budget, tol, opts.refactor_every, log);

    for (k, &i) in bounded.iter().enumerate() {
        x[i] = res.x[k];
        state.assignment[i] = res.modes[k];
    }
    for (k, &i) in free.iter().enumerate() {
        let zx: f64 = (0..nr).map(|j| z[(k, j)] * res.x[j]).sum();
        x[i] = -(z0[k] + zx);
        state.assignment[i] = Activity::Basic;
    }
    for &i in &fixed {
        state.assignment[i] = Activity::AtLower;
    }
    state.lemke_pivots += res.pivots;
    state.pivots += res.pivots;

    let mut status = res.status;
    if status == BlcpStatus::Solved {
        let err = lcp.complementarity_error(&x);
        if err > 1e3 * tol {
            log.note(&format!("lemke solution fails verification ({err:.3e})"));
            status = BlcpStatus::SingularBasis;
        }
    }
    (status, Some(x))
}

fn column(s: &DMatrix<f64>, d: &[f64], v: Var) -> DVector<f64> {
    let m = s.nrows();
    match v {
        Var::W(i) => {
            let mut c = DVector::zeros(m);
            c[i] = 1.0;
            c
        }
        Var::X(i) => -s.column(i),
        Var::T => -DVector::from_column_slice(d),
    }
}

struct Tableau<'a> {
    s: &'a DMatrix<f64>,
    q: &'a DVector<f64>,
    d: Vec<f64>,
    basis: Vec<Var>,
    binv: DMatrix<f64>,
    /// Value of each nonbasic `x_i`; meaningful only where `x_i` is nonbasic.
    xval: Vec<f64>,
    modes: Vec<Activity>,
}

impl Tableau<'_> {
    fn refactor(&mut self) -> bool {
        let m = self.s.nrows();
        let mut bmat = DMatrix::zeros(m, m);
        for (k, &v) in self.basis.iter().enumerate() {
            bmat.set_column(k, &column(self.s, &self.d, v));
        }
        match bmat.try_inverse() {
            Some(inv) => {
                self.binv = inv;
                true
            }
            None => false,
        }
    }

    fn is_basic_x(&self, i: usize) -> bool {
        self.basis.contains(&Var::X(i))
    }

    /// Basic values with every nonbasic variable at its current value.
    fn basic_values(&self) -> DVector<f64> {
        let m = self.s.nrows();
        let mut rhs = self.q.clone();
        for i in 0..m {
            if !self.is_basic_x(i) && self.xval[i] != 0.0 {
                // column of x_i is −S[:, i]
                rhs += self.s.column(i) * self.xval[i];
            }
        }
        &self.binv * rhs
    }

    fn pivot(&mut self, k: usize, a: &DVector<f64>) {
        let piv = a[k];
        let row_k = self.binv.row(k) / piv;
        for i in 0..self.binv.nrows() {
            if i != k && a[i] != 0.0 {
                let upd = &row_k * a[i];
                let mut r = self.binv.row_mut(i);
                r -= upd;
            }
        }
        self.binv.set_row(k, &row_k);
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn lemke_dense(
    s: &DMatrix<f64>,
    q: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
    budget: usize,
    tol: f64,
    refactor_every: usize,
    log: &mut PivotLog,
) -> DenseResult {
    let m = s.nrows();
    let mut modes: Vec<Activity> =
        (0..m).map(|i| if lo[i].is_finite() { Activity::AtLower } else { Activity::AtUpper }).collect();
    let xval: Vec<f64> = (0..m)
        .map(|i| if modes[i] == Activity::AtLower { lo[i] } else { hi[i] })
        .collect();
    let w0 = s * DVector::from_column_slice(&xval) + q;
    let viol = |i: usize| if modes[i] == Activity::AtLower { -w0[i] } else { w0[i] };
    let r = (0..m).max_by(|&a, &b| viol(a).total_cmp(&viol(b)));
    let r = match r {
        Some(r) if viol(r) > tol => r,
        _ => return DenseResult { status: BlcpStatus::Solved, x: xval, modes, pivots: 0 },
    };

    let d: Vec<f64> = modes.iter().map(|&a| if a == Activity::AtLower { 1.0 } else { -1.0 }).collect();
    let mut basis: Vec<Var> = (0..m).map(Var::W).collect();
    basis[r] = Var::T;
    let mut tab = Tableau { s, q, d, basis, binv: DMatrix::identity(m, m), xval, modes: Vec::new() };
    tab.modes = std::mem::take(&mut modes);
    if !tab.refactor() {
        return DenseResult { status: BlcpStatus::SingularBasis, x: tab.xval, modes: tab.modes, pivots: 0 };
    }

    // entering variable and its direction of motion
    let mut entering = Var::X(r);
    let mut dir = if tab.modes[r] == Activity::AtLower { 1.0 } else { -1.0 };
    let mut pivots = 0;
    let mut since_refactor = 0;

    let status = loop {
        if pivots >= budget {
            break BlcpStatus::PivotLimit;
        }
        let vals = tab.basic_values();
        let a = &tab.binv * column(s, &tab.d, entering);
        let delta: DVector<f64> = &a * (-dir);

        let eps = 1e-12 * (1.0 + delta.amax());
        let mut best: Option<(f64, Option<usize>)> = None;
        let mut ties: Vec<usize> = Vec::new();
        let consider = |theta: f64, k: Option<usize>, best: &mut Option<(f64, Option<usize>)>, ties: &mut Vec<usize>| {
            let theta = theta.max(0.0);
            match best {
                None => {
                    *best = Some((theta, k));
                    ties.clear();
                    ties.extend(k);
                }
                Some((bt, _)) => {
                    let gap = 1e-9 * (1.0 + bt.abs());
                    if theta < *bt - gap {
                        *best = Some((theta, k));
                        ties.clear();
                        ties.extend(k);
                    } else if (theta - *bt).abs() <= gap {
                        ties.extend(k);
                    }
                }
            }
        };
        for (k, &v) in tab.basis.iter().enumerate() {
            let dk = delta[k];
            let vk = vals[k];
            match v {
                Var::W(i) => {
                    if tab.modes[i] == Activity::AtLower && dk < -eps {
                        consider(vk / -dk, Some(k), &mut best, &mut ties);
                    } else if tab.modes[i] == Activity::AtUpper && dk > eps {
                        consider(-vk / dk, Some(k), &mut best, &mut ties);
                    }
                }
                Var::X(i) => {
                    if dk < -eps && lo[i].is_finite() {
                        consider((vk - lo[i]) / -dk, Some(k), &mut best, &mut ties);
                    } else if dk > eps && hi[i].is_finite() {
                        consider((hi[i] - vk) / dk, Some(k), &mut best, &mut ties);
                    }
                }
                Var::T => {
                    if dk < -eps {
                        consider(vk / -dk, Some(k), &mut best, &mut ties);
                    }
                }
            }
        }
        // the entering x may run into its opposite bound first
        let flip_theta = match entering {
            Var::X(j) if lo[j].is_finite() && hi[j].is_finite() => Some(hi[j] - lo[j]),
            _ => None,
        };

        let (theta, _) = match best {
            Some(b) => b,
            None => match flip_theta {
                Some(ft) => (ft, None),
                None => break BlcpStatus::RayTermination,
            },
        };

        let bound_flip = matches!(flip_theta, Some(ft) if ft < theta - 1e-9 * (1.0 + theta.abs()))
            || best.is_none();
        pivots += 1;

        if bound_flip {
            let Var::X(j) = entering else { unreachable!() };
            tab.modes[j] = if tab.modes[j] == Activity::AtLower { Activity::AtUpper } else { Activity::AtLower };
            tab.xval[j] = if tab.modes[j] == Activity::AtLower { lo[j] } else { hi[j] };
            log.pivot("lemke", pivots, || format!("bound flip x{j} -> {:?}", tab.modes[j]));
            entering = Var::W(j);
            dir = if tab.modes[j] == Activity::AtLower { 1.0 } else { -1.0 };
            continue;
        }

        // tie-breaking: the artificial variable first, then lexicographic
        // comparison of the scaled basis-inverse rows
        let k = if let Some(&k) = ties.iter().find(|&&k| tab.basis[k] == Var::T) {
            k
        } else {
            *ties
                .iter()
                .min_by(|&&p, &&q2| {
                    let rp = tab.binv.row(p) / delta[p].abs();
                    let rq = tab.binv.row(q2) / delta[q2].abs();
                    rp.iter()
                        .zip(rq.iter())
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap()
        };

        let leaving = tab.basis[k];
        // where the leaving x stops
        let leave_at = match leaving {
            Var::X(_) if delta[k] < 0.0 => Activity::AtLower,
            Var::X(_) => Activity::AtUpper,
            _ => Activity::Basic,
        };
        tab.basis[k] = entering;
        if let Var::X(j) = entering {
            tab.modes[j] = Activity::Basic;
        }
        since_refactor += 1;
        if since_refactor >= refactor_every {
            since_refactor = 0;
            if !tab.refactor() {
                break BlcpStatus::SingularBasis;
            }
        } else {
            tab.pivot(k, &a);
        }
        log.pivot("lemke", pivots, || format!("{entering:?} enters, {leaving:?} leaves"));

        match leaving {
            Var::T => break BlcpStatus::Solved,
            Var::W(i) => {
                entering = Var::X(i);
                dir = if tab.modes[i] == Activity::AtLower { 1.0 } else { -1.0 };
            }
            Var::X(i) => {
                tab.modes[i] = leave_at;
                tab.xval[i] = if leave_at == Activity::AtLower { lo[i] } else { hi[i] };
                entering = Var::W(i);
                dir = if leave_at == Activity::AtLower { 1.0 } else { -1.0 };
            }
        }
    };

    let vals = tab.basic_values();
    let mut x = tab.xval.clone();
    for (k, &v) in tab.basis.iter().enumerate() {
        if let Var::X(i) = v {
            x[i] = vals[k].clamp(lo[i], hi[i]);
        }
    }
    DenseResult { status, x, modes: tab.modes, pivots }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_box_problem_directly() {
        // S = [[2,1],[1,2]], q = (-1, -4) on [0, 1]^2
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let q = DVector::from_vec(vec![-1.0, -4.0]);
        let mut log = PivotLog::open(None);
        let r = lemke_dense(&s, &q, &[0.0, 0.0], &[1.0, 1.0], 50, 1e-12, 50, &mut log);
        assert_eq!(r.status, BlcpStatus::Solved);
        // x1 = 1 (w1 = x0 + 2 - 4 < 0 at upper), x0 = 0 (w0 = 1 - 1 = 0) is complementary
        let w = &s * DVector::from_column_slice(&r.x) + &q;
        for i in 0..2 {
            let ok = (r.x[i] <= 1e-12 && w[i] >= -1e-12)
                || (r.x[i] >= 1.0 - 1e-12 && w[i] <= 1e-12)
                || w[i].abs() <= 1e-12;
            assert!(ok, "index {i}: x = {:?}, w = {w}", r.x);
        }
    }
}
