use serde::{Deserialize, Serialize};

use super::{DevicePart, PowerFlowMcp, Var};
use crate::grid::{BusType, GridCase, GridState};
use crate::mcp::McpProblem;

pub const NOMINAL_HZ: f64 = 60.0;

/// Voltage-bound excess below which a bus does not count as violating.
pub const VIOLATION_TOL: f64 = 1e-6;

const AT_BOUND_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub bus: usize,
    pub vm: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Distance outside `[v_min, v_max]`.
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulationSummary {
    /// Largest `|v − v_sp|` over generator (PV) buses.
    pub max_v_deviation: f64,
    /// External id of the bus attaining it.
    pub max_v_deviation_bus: Option<usize>,
    pub q_at_limits: usize,
    pub devices_at_limits: usize,
    pub pg_at_limits: usize,
    pub df_pu: f64,
    pub frequency_hz: f64,
    pub violations: Vec<BoundViolation>,
}

impl RegulationSummary {
    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }

    pub fn max_violation(&self) -> f64 {
        self.violations.iter().map(|v| v.amount).fold(0.0, f64::max)
    }

    /// Frequency rounded to two decimals, e.g. `59.92 Hz`.
    pub fn frequency_text(&self) -> String {
        format!("{:.2} Hz", self.frequency_hz)
    }
}

/// Voltage and frequency statistics of an operating point; device and
/// limit counts are left at zero.
pub fn voltage_summary(case: &GridCase, s: &GridState) -> RegulationSummary {
    let mut max_dev = 0.0;
    let mut max_bus = None;
    for (i, b) in case.buses.iter().enumerate() {
        if b.kind == BusType::PV {
            let d = (s.vm[i] - b.v_sp).abs();
            if d > max_dev {
                max_dev = d;
                max_bus = Some(b.id);
            }
        }
    }
    let violations = case
        .buses
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let amount = (b.v_min - s.vm[i]).max(s.vm[i] - b.v_max);
            (amount > VIOLATION_TOL).then(|| BoundViolation { bus: b.id, vm: s.vm[i], v_min: b.v_min, v_max: b.v_max, amount })
        })
        .collect();
    RegulationSummary {
        max_v_deviation: max_dev,
        max_v_deviation_bus: max_bus,
        q_at_limits: 0,
        devices_at_limits: 0,
        pg_at_limits: 0,
        df_pu: s.df,
        frequency_hz: NOMINAL_HZ * (1.0 + s.df),
        violations,
    }
}

pub fn regulation_summary(p: &PowerFlowMcp, x: &[f64]) -> RegulationSummary {
    let s = p.state(x);
    let mut out = voltage_summary(&p.case, &s);
    let (l, u) = (p.bounds().lower(), p.bounds().upper());
    let at_bound = |k: usize| {
        (x[k] - l[k]).abs() <= AT_BOUND_TOL * (1.0 + l[k].abs()) || (u[k] - x[k]).abs() <= AT_BOUND_TOL * (1.0 + u[k].abs())
    };
    for (k, v) in p.layout.vars.iter().enumerate() {
        match v {
            Var::Qbus(_) if at_bound(k) => out.q_at_limits += 1,
            Var::Pg(_) if at_bound(k) => out.pg_at_limits += 1,
            _ => {}
        }
    }
    for (d, dev) in p.devices.iter().enumerate() {
        let k = p.layout.index_of(Var::Device(d, DevicePart::Value)).unwrap();
        if (x[k] - dev.min).abs() <= AT_BOUND_TOL || (dev.max - x[k]).abs() <= AT_BOUND_TOL {
            out.devices_at_limits += 1;
        }
    }
    out
}
