//! Power flow with voltage, tap/shunt and frequency regulation as one MCP.
//!
//! Rows, with `σ = ±1` the voltage sensitivity sign of a device:
//!
//! * `δ_i` free ⊥ `P_i` for PQ and PV buses, `v_i` free ⊥ `Q_i` for PQ buses;
//! * voltage control: `v_i` free ⊥ `Q_i` and `q_i ∈ [q_min, q_max]` ⊥ `v_i − v_sp`
//!   for each PV bus (`q_i` is the bus's total generator reactive output);
//! * per tap or shunt device with value `u` regulating bus `r`:
//!   `u` free ⊥ `u − u_sp − u⁺ + u⁻`, `s⁺ ≥ 0` ⊥ `u − u_min`, `s⁻ ≥ 0` ⊥ `u_max − u`,
//!   and for `σ = +1` `u⁺ ≥ 0` ⊥ `v_r + s⁻ − v_min`, `u⁻ ≥ 0` ⊥ `v_max − v_r + s⁺`
//!   (for `σ = −1` the two voltage expressions trade places);
//! * frequency control: `Δf` free ⊥ `P_slack` and
//!   `p_g ∈ [p_min, p_max]` ⊥ `p_g − p_sp + ν_g Δf` for generators on PV and slack buses.

mod summary;

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    build_admittance, pf_partials, pf_residual, Balance, BusType, GridCase, GridState, GridVar, Severity,
};
use crate::matpower::add_switched_shunt;
use crate::mcp::{Bounds, McpProblem};
use crate::sparse::{CsrMatrix, SparseLu};

pub use summary::{regulation_summary, voltage_summary, BoundViolation, RegulationSummary, NOMINAL_HZ, VIOLATION_TOL};

/// Smallest voltage magnitude a line search may reach.
pub const MIN_VOLTAGE: f64 = 0.1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegulationConfig {
    pub gen_voltage_control: bool,
    /// Branch ids (1-based rows of the case file).
    pub tap_control: Vec<usize>,
    /// External bus numbers.
    pub shunt_control: Vec<usize>,
    pub frequency_control: bool,
    /// Droop in percent for generators without an explicit gain.
    pub droop_percent: Option<f64>,
    /// Overrides device ranges: taps `u_sp (1 ± w)`, shunts `b_sp ± w max(|b_sp|, 1)`.
    pub device_width: Option<f64>,
}

impl RegulationConfig {
    pub fn stage_a() -> Self {
        Self::default()
    }

    pub fn stage_b() -> Self {
        RegulationConfig { gen_voltage_control: true, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DevicePart {
    Value,
    Up,
    Down,
    SlackLow,
    SlackHigh,
}

impl DevicePart {
    const ALL: [DevicePart; 5] =
        [DevicePart::Value, DevicePart::Up, DevicePart::Down, DevicePart::SlackLow, DevicePart::SlackHigh];

    fn suffix(self) -> &'static str {
        match self {
            DevicePart::Value => "",
            DevicePart::Up => "_up",
            DevicePart::Down => "_down",
            DevicePart::SlackLow => "_slack_lo",
            DevicePart::SlackHigh => "_slack_hi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Va(usize),
    Vm(usize),
    /// Total generator reactive output of a PV bus.
    Qbus(usize),
    Device(usize, DevicePart),
    Df,
    Pg(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceKind {
    /// Internal branch index.
    Tap(usize),
    /// Internal switched-shunt index.
    Shunt(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub kind: DeviceKind,
    pub regulated_bus: usize,
    pub set_point: f64,
    pub min: f64,
    pub max: f64,
    /// +1 when raising the device value raises the regulated voltage.
    pub orientation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    PowerFlow,
    Voltage,
    Devices,
    Frequency,
}

#[derive(Debug, Clone)]
pub struct VariableLayout {
    pub vars: Vec<Var>,
    pub names: Vec<String>,
    pub blocks: Vec<(Block, Range<usize>)>,
    index: HashMap<Var, usize>,
}

impl VariableLayout {
    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn index_of(&self, v: Var) -> Option<usize> {
        self.index.get(&v).copied()
    }

    pub fn index_by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn block(&self, b: Block) -> Range<usize> {
        self.blocks.iter().find(|(k, _)| *k == b).map(|(_, r)| r.clone()).unwrap_or(0..0)
    }
}

/// The assembled problem. Owns a copy of the case with any switched
/// shunts the configuration introduced.
#[derive(Debug, Clone)]
pub struct PowerFlowMcp {
    pub case: GridCase,
    pub config: RegulationConfig,
    pub layout: VariableLayout,
    pub devices: Vec<Device>,
    bounds: Bounds,
    base: GridState,
    /// Generator that carries each PV bus's reactive variable.
    q_carrier: HashMap<usize, usize>,
    bus_carrier: HashMap<usize, usize>,
    droop: Vec<f64>,
    tap_device: HashMap<usize, usize>,
    shunt_device: HashMap<usize, usize>,
}

/// The operating point stored in the case file (bus voltages and summed
/// generator reactive outputs) as named values, usable as a warm start.
pub fn stored_operating_point(case: &GridCase) -> Vec<(String, f64)> {
    let by_bus = case.generators_by_bus();
    let mut out = Vec::with_capacity(3 * case.n_bus());
    for (i, b) in case.buses.iter().enumerate() {
        out.push((name_of(case, &[], Var::Vm(i)), b.vm));
        out.push((name_of(case, &[], Var::Va(i)), b.va));
        if !by_bus[i].is_empty() {
            out.push((name_of(case, &[], Var::Qbus(i)), by_bus[i].iter().map(|&g| case.generators[g].q0).sum()));
        }
    }
    out
}

fn name_of(case: &GridCase, devices: &[Device], v: Var) -> String {
    match v {
        Var::Va(i) => format!("va[bus {}]", case.buses[i].id),
        Var::Vm(i) => format!("vm[bus {}]", case.buses[i].id),
        Var::Qbus(i) => format!("qg[bus {}]", case.buses[i].id),
        Var::Device(d, part) => match devices[d].kind {
            DeviceKind::Tap(k) => format!("tap{}[br {}]", part.suffix(), case.branches[k].id),
            DeviceKind::Shunt(s) => format!("shunt{}[bus {}]", part.suffix(), case.buses[case.shunts[s].bus].id),
        },
        Var::Df => "df".to_string(),
        Var::Pg(g) => format!("pg[gen {}]", case.generators[g].id),
    }
}

/// Build the MCP for `case` under `config`.
pub fn assemble(case: &GridCase, config: &RegulationConfig) -> Result<PowerFlowMcp> {
    case.validate()?;
    let mut case = case.clone();
    if let Some(w) = config.device_width {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidConfig(format!("device width {w} must be a nonnegative number")));
        }
    }
    if let Some(p) = config.droop_percent {
        if !(p > 0.0) {
            return Err(Error::InvalidConfig(format!("droop percent {p} must be positive")));
        }
    }

    // devices
    let mut devices = Vec::new();
    for &id in &config.tap_control {
        let k = case
            .branch_index(id)
            .ok_or_else(|| Error::InvalidConfig(format!("tap control: branch {id} is not in service")))?;
        let br = &case.branches[k];
        let sp = br.tap;
        let (min, max) = match (config.device_width, br.tap_min, br.tap_max) {
            (Some(w), _, _) => (sp * (1.0 - w), sp * (1.0 + w)),
            (None, Some(lo), Some(hi)) => (lo.min(sp), hi.max(sp)),
            _ => return Err(Error::InvalidConfig(format!("tap control: branch {id} has no tap bounds"))),
        };
        if !(min > 0.0) {
            return Err(Error::InvalidConfig(format!("tap control: branch {id} lower tap bound {min} not positive")));
        }
        let regulated_bus = br.regulated_bus.unwrap_or(br.to);
        devices.push(Device { kind: DeviceKind::Tap(k), regulated_bus, set_point: sp, min, max, orientation: 1.0 });
    }
    for &id in &config.shunt_control {
        let i = case
            .bus_index(id)
            .ok_or_else(|| Error::InvalidConfig(format!("shunt control: bus {id} unknown")))?;
        let s = match (case.shunt_index(i), config.device_width) {
            (Some(s), None) => s,
            (existing, Some(w)) => {
                let sp = existing.map_or(case.buses[i].bs, |s| case.shunts[s].b_sp);
                let half = w * sp.abs().max(1.0);
                add_switched_shunt(&mut case, i, Some(sp), sp - half, sp + half);
                let s = case.shunt_index(i).unwrap();
                case.shunts[s].b_min = sp - half;
                case.shunts[s].b_max = sp + half;
                s
            }
            (None, None) => return Err(Error::InvalidConfig(format!("shunt control: bus {id} has no shunt bounds"))),
        };
        let sh = &case.shunts[s];
        devices.push(Device {
            kind: DeviceKind::Shunt(s),
            regulated_bus: i,
            set_point: sh.b_sp,
            min: sh.b_min,
            max: sh.b_max,
            orientation: 1.0,
        });
    }

    // droop gains
    let mut droop = vec![0.0; case.generators.len()];
    for (g, gen) in case.generators.iter().enumerate() {
        droop[g] = match (gen.droop, config.droop_percent) {
            (Some(nu), _) => nu,
            (None, Some(p)) => gen.p_max.max(0.0) / (p / 100.0),
            (None, None) => case.droop_gain(g),
        };
    }

    // layout
    let pq = case.buses_of_type(BusType::PQ);
    let pv = case.buses_of_type(BusType::PV);
    let by_bus = case.generators_by_bus();
    let mut vars = Vec::new();
    let mut blocks = Vec::new();
    vars.extend(pq.iter().map(|&i| Var::Va(i)));
    vars.extend(pq.iter().map(|&i| Var::Vm(i)));
    vars.extend(pv.iter().map(|&i| Var::Va(i)));
    blocks.push((Block::PowerFlow, 0..vars.len()));
    let mut q_carrier = HashMap::new();
    if config.gen_voltage_control {
        let start = vars.len();
        vars.extend(pv.iter().map(|&i| Var::Vm(i)));
        for &i in &pv {
            vars.push(Var::Qbus(i));
            q_carrier.insert(by_bus[i][0], i);
        }
        blocks.push((Block::Voltage, start..vars.len()));
    }
    if !devices.is_empty() {
        let start = vars.len();
        for d in 0..devices.len() {
            vars.extend(DevicePart::ALL.iter().map(|&p| Var::Device(d, p)));
        }
        blocks.push((Block::Devices, start..vars.len()));
    }
    if config.frequency_control {
        let start = vars.len();
        vars.push(Var::Df);
        for (g, gen) in case.generators.iter().enumerate() {
            if case.buses[gen.bus].kind != BusType::PQ {
                if !droop[g].is_finite() || droop[g] < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "generator {} droop gain {} is not a finite nonnegative number",
                        gen.id, droop[g]
                    )));
                }
                if !gen.p_min.is_finite() && !gen.p_max.is_finite() && droop[g] == 0.0 {
                    log::debug!("generator {} has neither p bounds nor droop", gen.id);
                }
                vars.push(Var::Pg(g));
            }
        }
        blocks.push((Block::Frequency, start..vars.len()));
    }

    let index: HashMap<Var, usize> = vars.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    assert_eq!(index.len(), vars.len(), "layout variables are distinct");

    let mut lower = vec![f64::NEG_INFINITY; vars.len()];
    let mut upper = vec![f64::INFINITY; vars.len()];
    for (k, v) in vars.iter().enumerate() {
        match *v {
            Var::Qbus(i) => {
                lower[k] = by_bus[i].iter().map(|&g| case.generators[g].q_min).sum();
                upper[k] = by_bus[i].iter().map(|&g| case.generators[g].q_max).sum();
            }
            Var::Device(_, DevicePart::Value) => {}
            Var::Device(..) => lower[k] = 0.0,
            Var::Pg(g) => {
                lower[k] = case.generators[g].p_min;
                upper[k] = case.generators[g].p_max;
            }
            _ => {}
        }
    }
    let bounds = Bounds::new(lower, upper)?;

    let mut base = GridState::flat(&case);
    for d in &devices {
        match d.kind {
            DeviceKind::Tap(b) => base.tap[b] = d.set_point,
            DeviceKind::Shunt(s) => base.shunt_b[s] = d.set_point,
        }
    }
    let bus_carrier: HashMap<usize, usize> = q_carrier.iter().map(|(&g, &i)| (i, g)).collect();
    for (&i, &g) in &bus_carrier {
        for &h in &by_bus[i] {
            if h != g {
                base.qg[h] = 0.0;
            }
        }
    }
    let tap_device = devices
        .iter()
        .enumerate()
        .filter_map(|(d, dev)| match dev.kind {
            DeviceKind::Tap(b) => Some((b, d)),
            _ => None,
        })
        .collect();
    let shunt_device = devices
        .iter()
        .enumerate()
        .filter_map(|(d, dev)| match dev.kind {
            DeviceKind::Shunt(s) => Some((s, d)),
            _ => None,
        })
        .collect();

    let names = vars.iter().map(|&v| name_of(&case, &devices, v)).collect();
    let layout = VariableLayout { vars, names, blocks, index };
    let mut problem = PowerFlowMcp {
        case,
        config: config.clone(),
        layout,
        devices,
        bounds,
        base,
        q_carrier,
        bus_carrier,
        droop,
        tap_device,
        shunt_device,
    };
    if !problem.devices.is_empty() {
        let x0 = problem.flat_start();
        problem.orient_devices(&x0)?;
    }
    Ok(problem)
}

impl PowerFlowMcp {
    pub fn droop(&self, g: usize) -> f64 {
        self.droop[g]
    }

    /// The row paired with each power-balance equation, if it is in the system.
    fn balance_row(&self, b: Balance) -> Option<usize> {
        match b {
            Balance::P(i) if i == self.case.slack => self.layout.index_of(Var::Df),
            Balance::P(i) => self.layout.index_of(Var::Va(i)),
            Balance::Q(i) => self.layout.index_of(Var::Vm(i)),
        }
    }

    fn grid_column(&self, v: GridVar) -> Option<usize> {
        match v {
            GridVar::Va(i) => self.layout.index_of(Var::Va(i)),
            GridVar::Vm(i) => self.layout.index_of(Var::Vm(i)),
            GridVar::Pg(g) => self.layout.index_of(Var::Pg(g)),
            GridVar::Qg(g) => self.q_carrier.get(&g).and_then(|&i| self.layout.index_of(Var::Qbus(i))),
            GridVar::Tap(k) => self.tap_device.get(&k).and_then(|&d| self.layout.index_of(Var::Device(d, DevicePart::Value))),
            GridVar::Shunt(s) => {
                self.shunt_device.get(&s).and_then(|&d| self.layout.index_of(Var::Device(d, DevicePart::Value)))
            }
        }
    }

    /// Grid state implied by `x`; parameters keep their base values. The
    /// reactive output of a PV bus is carried by its first generator.
    pub fn state(&self, x: &[f64]) -> GridState {
        let mut s = self.base.clone();
        for (k, v) in self.layout.vars.iter().enumerate() {
            match *v {
                Var::Va(i) => s.va[i] = x[k],
                Var::Vm(i) => s.vm[i] = x[k],
                Var::Qbus(i) => s.qg[self.bus_carrier[&i]] = x[k],
                Var::Device(d, DevicePart::Value) => match self.devices[d].kind {
                    DeviceKind::Tap(b) => s.tap[b] = x[k],
                    DeviceKind::Shunt(sh) => s.shunt_b[sh] = x[k],
                },
                Var::Device(..) => {}
                Var::Df => s.df = x[k],
                Var::Pg(g) => s.pg[g] = x[k],
            }
        }
        s
    }

    /// Full operating point at `x`: generator outputs that are not variables
    /// are set to balance their bus (slack P and Q, PV Q without voltage
    /// control). Reactive power at a bus is shared in proportion to the
    /// generators' reactive ranges.
    pub fn complete_state(&self, x: &[f64]) -> Result<GridState> {
        let mut s = self.state(x);
        let y = build_admittance(&self.case, &s)?;
        let (p, q) = pf_residual(&self.case, &y, &s)?;
        let by_bus = self.case.generators_by_bus();
        for (i, gens) in by_bus.iter().enumerate() {
            if gens.is_empty() {
                continue;
            }
            let kind = self.case.buses[i].kind;
            if kind == BusType::Slack && !self.config.frequency_control {
                s.pg[gens[0]] -= p[i];
            }
            if kind != BusType::PQ {
                let total: f64 = gens.iter().map(|&g| s.qg[g]).sum::<f64>() - q[i];
                let ranges: Vec<f64> = gens
                    .iter()
                    .map(|&g| {
                        let r = self.case.generators[g].q_max - self.case.generators[g].q_min;
                        if r.is_finite() && r > 0.0 { r } else { 0.0 }
                    })
                    .collect();
                let sum: f64 = ranges.iter().sum();
                for (k, &g) in gens.iter().enumerate() {
                    s.qg[g] = if sum > 0.0 { total * ranges[k] / sum } else { total / gens.len() as f64 };
                }
            }
        }
        Ok(s)
    }

    /// Default starting point: `v = 1` at PQ buses, set points at PV buses,
    /// `δ = 0`, reactive outputs at mid-range clamped to their limits,
    /// devices at set points, `Δf = 0`.
    pub fn flat_start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.len()];
        let (l, u) = (self.bounds.lower(), self.bounds.upper());
        for (k, v) in self.layout.vars.iter().enumerate() {
            x[k] = match *v {
                Var::Va(_) | Var::Df => 0.0,
                Var::Vm(i) => self.base.vm[i],
                Var::Qbus(_) => {
                    let mid = if l[k].is_finite() && u[k].is_finite() { 0.5 * (l[k] + u[k]) } else { 0.0 };
                    mid.clamp(l[k], u[k])
                }
                Var::Device(d, DevicePart::Value) => self.devices[d].set_point,
                Var::Device(..) => 0.0,
                Var::Pg(g) => self.case.generators[g].p_sp.clamp(l[k], u[k]),
            };
        }
        x
    }

    /// Start from named values of an earlier solve; variables without a
    /// match take their flat-start value.
    pub fn initial_point(&self, warm: Option<&[(String, f64)]>) -> Result<Vec<f64>> {
        let mut x = self.flat_start();
        let Some(warm) = warm else { return Ok(x) };
        if warm.is_empty() {
            return Ok(x);
        }
        let map: HashMap<&str, f64> = warm.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        let mut matched = 0;
        for (k, name) in self.layout.names.iter().enumerate() {
            if let Some(&v) = map.get(name.as_str()) {
                if !v.is_finite() {
                    return Err(Error::NonFinite { what: "warm start value", index: k });
                }
                x[k] = v;
                matched += 1;
            }
        }
        if matched == 0 {
            return Err(Error::InvalidConfig("warm start shares no variables with this problem".into()));
        }
        Ok(self.bounds.project(&x))
    }

    /// Named values of `x`, suitable as a later warm start.
    pub fn named_values(&self, x: &[f64]) -> Vec<(String, f64)> {
        self.layout.names.iter().cloned().zip(x.iter().copied()).collect()
    }

    /// Voltage sensitivity sign of every device at `x`. Uses the sign of
    /// `∂Q_r/∂u` when the regulated bus is incident to the device, and a
    /// linearized power-flow solve otherwise.
    fn orient_devices(&mut self, x: &[f64]) -> Result<()> {
        let s = self.state(x);
        let y = build_admittance(&self.case, &s)?;
        let mut dq: HashMap<(usize, usize), f64> = HashMap::new();
        pf_partials(&self.case, &y, &s, |row, var, v| {
            let d = match var {
                GridVar::Tap(k) => self.tap_device.get(&k),
                GridVar::Shunt(k) => self.shunt_device.get(&k),
                _ => None,
            };
            if let (Some(&d), Balance::Q(i)) = (d, row) {
                *dq.entry((d, i)).or_default() += v;
            }
        })?;
        let mut flipped = Vec::new();
        for d in 0..self.devices.len() {
            let r = self.devices[d].regulated_bus;
            let sign = match dq.get(&(d, r)) {
                Some(&v) if v != 0.0 => v.signum(),
                _ => self.sensitivity_sign(x, d)?,
            };
            self.devices[d].orientation = sign;
            if sign < 0.0 {
                flipped.push(d);
            }
        }
        if !flipped.is_empty() {
            let names: Vec<String> = flipped
                .iter()
                .map(|&d| self.layout.names[self.layout.index_of(Var::Device(d, DevicePart::Value)).unwrap()].clone())
                .collect();
            self.case.note(
                Severity::Info,
                format!("{} devices lower their regulated voltage when raised: {}", names.len(), names.join(", ")),
            );
        }
        Ok(())
    }

    /// Sign of `dv_r/du` from the power-flow block with all other controls fixed.
    fn sensitivity_sign(&self, x: &[f64], d: usize) -> Result<f64> {
        let r = self.devices[d].regulated_bus;
        let Some(vr) = self.layout.index_of(Var::Vm(r)) else {
            return Ok(1.0);
        };
        let pf = self.layout.block(Block::PowerFlow);
        let volt = self.layout.block(Block::Voltage);
        let keep: Vec<usize> = pf
            .chain(volt)
            .filter(|&k| !matches!(self.layout.vars[k], Var::Qbus(_)))
            .collect();
        let pos: HashMap<usize, usize> = keep.iter().enumerate().map(|(a, &k)| (k, a)).collect();
        let jac = self.jacobian(x)?;
        let a = jac.submatrix(&keep, &keep);
        let col = self.layout.index_of(Var::Device(d, DevicePart::Value)).unwrap();
        let mut rhs: Vec<f64> = keep.iter().map(|&k| -jac.get(k, col)).collect();
        let lu = SparseLu::factor(&a)?;
        lu.solve_in_place(&mut rhs)?;
        Ok(if rhs[pos[&vr]] < 0.0 { -1.0 } else { 1.0 })
    }

    fn voltage(&self, x: &[f64], i: usize) -> f64 {
        self.layout.index_of(Var::Vm(i)).map_or(self.base.vm[i], |k| x[k])
    }
}

impl McpProblem for PowerFlowMcp {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let s = self.state(x);
        let y = build_admittance(&self.case, &s)?;
        let (p, q) = pf_residual(&self.case, &y, &s)?;
        let at = |v: Var| x[self.layout.index_of(v).unwrap()];
        let mut f = vec![0.0; self.dim()];
        for (k, v) in self.layout.vars.iter().enumerate() {
            f[k] = match *v {
                Var::Va(i) => p[i],
                Var::Vm(i) => q[i],
                Var::Qbus(i) => x[self.layout.index_of(Var::Vm(i)).unwrap()] - self.case.buses[i].v_sp,
                Var::Device(d, part) => {
                    let dev = &self.devices[d];
                    let u = at(Var::Device(d, DevicePart::Value));
                    let vr = self.voltage(x, dev.regulated_bus);
                    let bus = &self.case.buses[dev.regulated_bus];
                    let low = |slack: f64| vr + slack - bus.v_min;
                    let high = |slack: f64| bus.v_max - vr + slack;
                    let s_lo = at(Var::Device(d, DevicePart::SlackLow));
                    let s_hi = at(Var::Device(d, DevicePart::SlackHigh));
                    match part {
                        DevicePart::Value => {
                            u - dev.set_point - at(Var::Device(d, DevicePart::Up)) + at(Var::Device(d, DevicePart::Down))
                        }
                        DevicePart::Up if dev.orientation > 0.0 => low(s_hi),
                        DevicePart::Up => high(s_hi),
                        DevicePart::Down if dev.orientation > 0.0 => high(s_lo),
                        DevicePart::Down => low(s_lo),
                        DevicePart::SlackLow => u - dev.min,
                        DevicePart::SlackHigh => dev.max - u,
                    }
                }
                Var::Df => p[self.case.slack],
                Var::Pg(g) => x[k] - self.case.generators[g].p_sp + self.droop[g] * at(Var::Df),
            };
        }
        Ok(f)
    }

    fn jacobian(&self, x: &[f64]) -> Result<CsrMatrix> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        let s = self.state(x);
        let y = build_admittance(&self.case, &s)?;
        let mut t = Vec::with_capacity(8 * n);
        pf_partials(&self.case, &y, &s, |row, var, v| {
            if let (Some(r), Some(c)) = (self.balance_row(row), self.grid_column(var)) {
                t.push((r, c, v));
            }
        })?;
        let idx = |v: Var| self.layout.index_of(v).unwrap();
        for (k, v) in self.layout.vars.iter().enumerate() {
            match *v {
                Var::Qbus(i) => t.push((k, idx(Var::Vm(i)), 1.0)),
                Var::Device(d, part) => {
                    let dev = &self.devices[d];
                    let vr = self.layout.index_of(Var::Vm(dev.regulated_bus));
                    let value = idx(Var::Device(d, DevicePart::Value));
                    let up_sign = dev.orientation;
                    match part {
                        DevicePart::Value => {
                            t.push((k, value, 1.0));
                            t.push((k, idx(Var::Device(d, DevicePart::Up)), -1.0));
                            t.push((k, idx(Var::Device(d, DevicePart::Down)), 1.0));
                        }
                        DevicePart::Up => {
                            if let Some(c) = vr {
                                t.push((k, c, up_sign));
                            }
                            t.push((k, idx(Var::Device(d, DevicePart::SlackHigh)), 1.0));
                        }
                        DevicePart::Down => {
                            if let Some(c) = vr {
                                t.push((k, c, -up_sign));
                            }
                            t.push((k, idx(Var::Device(d, DevicePart::SlackLow)), 1.0));
                        }
                        DevicePart::SlackLow => t.push((k, value, 1.0)),
                        DevicePart::SlackHigh => t.push((k, value, -1.0)),
                    }
                }
                Var::Pg(g) => {
                    t.push((k, k, 1.0));
                    t.push((k, idx(Var::Df), self.droop[g]));
                }
                _ => {}
            }
        }
        Ok(CsrMatrix::from_triplets(n, n, &t))
    }

    fn variable_name(&self, i: usize) -> String {
        self.layout.names[i].clone()
    }

    fn max_step(&self, x: &[f64], dir: &[f64]) -> f64 {
        let mut t: f64 = 1.0;
        for (k, v) in self.layout.vars.iter().enumerate() {
            if let Var::Vm(_) = v {
                if dir[k] < 0.0 && x[k] > MIN_VOLTAGE {
                    t = t.min((x[k] - MIN_VOLTAGE) / -dir[k]);
                }
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::*;
    use crate::newton::{solve, SolverOptions};

    fn three_bus() -> GridCase {
        let mut c = two_bus(0.8, 0.3);
        c.buses.push(bus(3, BusType::PV));
        c.buses[2].v_sp = 1.02;
        c.generators.push(generator(2, 2));
        c.generators[1].p_sp = 0.3;
        c.generators[1].q_min = -0.5;
        c.generators[1].q_max = 0.5;
        c.branches.push(line(2, 1, 2, 0.01, 0.08, 0.02));
        c.branches.push(line(3, 0, 2, 0.02, 0.12, 0.0));
        c
    }

    #[test]
    fn dimensions_follow_bus_types() {
        let c = three_bus();
        let a = assemble(&c, &RegulationConfig::stage_a()).unwrap();
        assert_eq!(a.dim(), 2 * 1 + 1);
        let b = assemble(&c, &RegulationConfig::stage_b()).unwrap();
        assert_eq!(b.dim(), a.dim() + 2);
        assert_eq!(b.layout.names[3], "vm[bus 3]");
        assert_eq!(b.layout.names[4], "qg[bus 3]");
        assert_eq!(b.bounds().lower()[4], -0.5);
    }

    #[test]
    fn generator_voltage_case_analysis() {
        let c = three_bus();
        let p = assemble(&c, &RegulationConfig::stage_b()).unwrap();
        let (x, rep) = solve(&p, &p.flat_start(), &SolverOptions::default()).unwrap();
        assert!(rep.converged());
        let q = x[p.layout.index_of(Var::Qbus(2)).unwrap()];
        let v = x[p.layout.index_of(Var::Vm(2)).unwrap()];
        assert!(q > -0.5 && q < 0.5);
        assert!((v - 1.02).abs() < 1e-8);

        // tight q limit: the bus must fall below its set point
        let mut c2 = c.clone();
        c2.generators[1].q_max = 0.05;
        let p2 = assemble(&c2, &RegulationConfig::stage_b()).unwrap();
        let (x2, rep2) = solve(&p2, &p2.flat_start(), &SolverOptions::default()).unwrap();
        assert!(rep2.converged());
        assert_eq!(x2[p2.layout.index_of(Var::Qbus(2)).unwrap()], 0.05);
        assert!(x2[p2.layout.index_of(Var::Vm(2)).unwrap()] < 1.02);
    }

    #[test]
    fn warm_start_by_name() {
        let c = three_bus();
        let a = assemble(&c, &RegulationConfig::stage_a()).unwrap();
        let (xa, _) = solve(&a, &a.flat_start(), &SolverOptions::default()).unwrap();
        let b = assemble(&c, &RegulationConfig::stage_b()).unwrap();
        let x0 = b.initial_point(Some(&a.named_values(&xa))).unwrap();
        assert_eq!(&x0[..3], &xa[..]);
        assert!(b.initial_point(Some(&[("nothing".into(), 1.0)])).is_err());
        let (xb, rep) = solve(&b, &b.initial_point(Some(&b.named_values(&x0))).unwrap(), &SolverOptions::default()).unwrap();
        assert!(rep.converged());
        let again = solve(&b, &b.initial_point(Some(&b.named_values(&xb))).unwrap(), &SolverOptions::default()).unwrap().1;
        assert!(again.iterations <= 1);
    }

    #[test]
    fn tap_orientation() {
        let mut c = three_bus();
        c.branches[0].transformer = true;
        c.branches[0].tap_min = Some(0.9);
        c.branches[0].tap_max = Some(1.1);
        let cfg = RegulationConfig { tap_control: vec![1], ..RegulationConfig::stage_b() };
        let p = assemble(&c, &cfg).unwrap();
        // branch 1 goes 1 -> 2 and regulates its to-bus: raising the ratio lowers it
        assert_eq!(p.devices[0].orientation, -1.0);
        assert_eq!(p.devices[0].regulated_bus, 1);
    }
}
