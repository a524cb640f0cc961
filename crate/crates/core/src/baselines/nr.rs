use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::formulation::{assemble, voltage_summary, RegulationConfig};
use crate::grid::{BusType, GridCase, GridState};
use crate::mcp::{checked_residual, norm_inf, McpProblem};
use crate::newton::{IterationRecord, SolveReport, SolveStatus};
use crate::sparse::SparseLu;

#[derive(Debug, Clone)]
pub struct NrOptions {
    pub tol: f64,
    /// Newton iterations per switching round.
    pub max_inner: usize,
    /// Reactive-limit excess that triggers a PV to PQ switch.
    pub switch_tol: f64,
    /// Switch-backs allowed per bus before the run is declared cycling.
    pub max_reversals: usize,
    pub max_rounds: usize,
    pub enforce_q_limits: bool,
}

impl Default for NrOptions {
    fn default() -> Self {
        NrOptions { tol: 1e-8, max_inner: 20, switch_tol: 1e-8, max_reversals: 3, max_rounds: 50, enforce_q_limits: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BusMode {
    PV,
    PqAtMin,
    PqAtMax,
}

#[derive(Debug, Clone, Serialize)]
pub struct SwitchEvent {
    pub round: usize,
    pub bus: usize,
    pub to: BusMode,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SwitchLog {
    pub events: Vec<SwitchEvent>,
    pub rounds: usize,
    pub cycling: bool,
}

impl SwitchLog {
    pub fn reversals(&self, bus: usize) -> usize {
        self.events.iter().filter(|e| e.bus == bus && e.to == BusMode::PV).count()
    }
}

/// Plain Newton–Raphson on the power-balance equations with full steps.
/// Returns the operating point and a report whose residual history is the
/// ∞-norm mismatch.
pub fn newton_raphson(case: &GridCase, warm: Option<&[(String, f64)]>, opts: &NrOptions) -> Result<(GridState, Vec<(String, f64)>, SolveReport)> {
    let start = Instant::now();
    let p = assemble(case, &RegulationConfig::stage_a())?;
    let mut x = match warm {
        Some(w) => p.initial_point(Some(w)).unwrap_or_else(|_| p.flat_start()),
        None => p.flat_start(),
    };
    let mut report = SolveReport::new();
    let mut f = checked_residual(&p, &x)?;
    report.residual_history.push(norm_inf(&f));
    report.status = loop {
        let r = norm_inf(&f);
        if r <= opts.tol {
            break SolveStatus::Converged;
        }
        if report.iterations >= opts.max_inner {
            break SolveStatus::IterationLimit;
        }
        let step = p.jacobian(&x).and_then(|j| SparseLu::factor(&j)).and_then(|lu| {
            let mut d: Vec<f64> = f.iter().map(|v| -v).collect();
            lu.solve_in_place(&mut d)?;
            Ok(d)
        });
        let Ok(dx) = step else {
            report.message = "singular power-flow jacobian".into();
            break SolveStatus::SubproblemFailure;
        };
        for (a, d) in x.iter_mut().zip(&dx) {
            *a += d;
        }
        match checked_residual(&p, &x) {
            Ok(fn_) => f = fn_,
            Err(e) => {
                report.message = format!("residual failed: {e}");
                break SolveStatus::Diverged;
            }
        }
        report.iterations += 1;
        let r = norm_inf(&f);
        report.residual_history.push(r);
        report.merit_history.push(0.5 * f.iter().map(|v| v * v).sum::<f64>());
        report.trace.push(IterationRecord { iteration: report.iterations, merit: 0.0, residual: r, step: 1.0, pivots: 0, perturbation: 0.0 });
        if !r.is_finite() || r > 1e10 {
            break SolveStatus::Diverged;
        }
    };
    let state = p.complete_state(&x)?;
    report.q_order = crate::newton::estimate_q_order(&report.residual_history);
    report.wall_time = start.elapsed();
    Ok((state, p.named_values(&x), report))
}

/// Newton–Raphson with PV–PQ switching: a generator bus whose reactive
/// requirement leaves its range is held at the violated limit as a load bus,
/// and released when its voltage crosses back over the set point.
pub fn nr_pv_pq(case: &GridCase, opts: &NrOptions) -> Result<(GridState, SolveReport, SwitchLog)> {
    let start = Instant::now();
    case.validate()?;
    let n = case.n_bus();
    let by_bus = case.generators_by_bus();
    let mut mode = vec![BusMode::PV; n];
    let mut log = SwitchLog::default();
    let mut warm: Option<Vec<(String, f64)>> = None;
    let mut total = SolveReport::new();
    let mut reversals = vec![0usize; n];

    loop {
        log.rounds += 1;
        let mut work = case.clone();
        for i in 0..n {
            if mode[i] == BusMode::PV {
                continue;
            }
            work.buses[i].kind = BusType::PQ;
            for &g in &by_bus[i] {
                let gen = &mut work.generators[g];
                gen.q0 = if mode[i] == BusMode::PqAtMax { gen.q_max } else { gen.q_min };
            }
        }
        let (state, names, rep) = newton_raphson(&work, warm.as_deref(), opts)?;
        total.iterations += rep.iterations;
        total.residual_history.extend(&rep.residual_history);
        total.merit_history.extend(&rep.merit_history);
        total.trace.extend(rep.trace.iter().cloned());
        total.status = rep.status;
        total.message = rep.message.clone();
        total.q_order = rep.q_order;
        if !rep.converged() {
            state.check(case)?;
            total.wall_time = start.elapsed();
            return Ok((state, total, log));
        }
        warm = Some(names);
        if !opts.enforce_q_limits {
            total.regulation = Some(voltage_summary(case, &state));
            total.wall_time = start.elapsed();
            return Ok((state, total, log));
        }

        let mut changed = false;
        for i in 0..n {
            if by_bus[i].is_empty() || case.buses[i].kind != BusType::PV {
                continue;
            }
            let q: f64 = by_bus[i].iter().map(|&g| state.qg[g]).sum();
            let qmin: f64 = by_bus[i].iter().map(|&g| case.generators[g].q_min).sum();
            let qmax: f64 = by_bus[i].iter().map(|&g| case.generators[g].q_max).sum();
            let v_sp = case.buses[i].v_sp;
            let next = match mode[i] {
                BusMode::PV if q > qmax + opts.switch_tol => BusMode::PqAtMax,
                BusMode::PV if q < qmin - opts.switch_tol => BusMode::PqAtMin,
                BusMode::PqAtMax if state.vm[i] > v_sp + opts.switch_tol => BusMode::PV,
                BusMode::PqAtMin if state.vm[i] < v_sp - opts.switch_tol => BusMode::PV,
                m => m,
            };
            if next != mode[i] {
                if next == BusMode::PV {
                    reversals[i] += 1;
                }
                mode[i] = next;
                changed = true;
                log.events.push(SwitchEvent { round: log.rounds, bus: case.buses[i].id, to: next });
            }
        }
        let cycling = reversals.iter().any(|&r| r > opts.max_reversals);
        if !changed || cycling || log.rounds >= opts.max_rounds {
            if cycling {
                log.cycling = true;
                total.status = SolveStatus::Diverged;
                total.message = "PV-PQ switching is cycling".into();
            } else if changed {
                total.status = SolveStatus::IterationLimit;
                total.message = "switching did not settle".into();
            }
            total.regulation = Some(voltage_summary(case, &state));
            total.wall_time = start.elapsed();
            return Ok((state, total, log));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::two_bus;

    #[test]
    fn two_bus_converges_quadratically() {
        let c = two_bus(0.5, 0.2);
        let (s, rep) = {
            let (s, _, r) = newton_raphson(&c, None, &NrOptions::default()).unwrap();
            (s, r)
        };
        assert!(rep.converged(), "{:?}", rep.residual_history);
        assert!(rep.iterations <= 6);
        assert!(s.vm[1] < 1.0);
    }

    #[test]
    fn tight_limits_switch_the_bus() {
        let mut c = two_bus(0.5, 0.2);
        // make bus 1 a PV bus with a narrow range
        let mut extra = c.generators[0].clone();
        extra.id = 2;
        extra.bus = 1;
        extra.p_sp = 0.0;
        extra.q_min = -0.01;
        extra.q_max = 0.01;
        c.generators.push(extra);
        c.buses[1].kind = BusType::PV;
        c.buses[1].v_sp = 1.05;
        let (s, rep, log) = nr_pv_pq(&c, &NrOptions::default()).unwrap();
        assert!(rep.converged());
        assert_eq!(log.events.len(), 1);
        assert_eq!(log.events[0].to, BusMode::PqAtMax);
        assert!((s.qg[1] - 0.01).abs() < 1e-12);
        assert!(s.vm[1] < 1.05);
    }
}
