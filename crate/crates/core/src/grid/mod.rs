//! Network data model: buses, generators, branches and switched shunts in
//! per-unit, plus the nodal admittance and the AC power-balance residuals.

mod admittance;
mod flow;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admittance::{build_admittance, AdmittanceModel, BranchAdmittance};
pub use flow::{pf_jacobian, pf_partials, pf_residual, Balance, GridVar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusType {
    PQ,
    PV,
    Slack,
}

impl BusType {
    pub fn matpower_code(self) -> u8 {
        match self {
            BusType::PQ => 1,
            BusType::PV => 2,
            BusType::Slack => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External bus number as written in the case file.
    pub id: usize,
    pub kind: BusType,
    pub pd: f64,
    pub qd: f64,
    /// Fixed shunt conductance and susceptance (p.u. at 1 p.u. voltage).
    pub gs: f64,
    pub bs: f64,
    /// Stored operating point; the slack angle is taken from here.
    pub vm: f64,
    pub va: f64,
    pub v_sp: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub base_kv: f64,
    pub area: usize,
    pub zone: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// 1-based row of the generator in the case file.
    pub id: usize,
    /// Internal bus index.
    pub bus: usize,
    pub p_sp: f64,
    pub q0: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub vg: f64,
    pub mbase: f64,
    /// Droop gain in p.u. power per p.u. frequency; `None` uses the default.
    pub droop: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// 1-based row of the branch in the case file.
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub rate_a: f64,
    /// Off-nominal ratio on the from side; 1.0 for lines.
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// True when the case file gives a nonzero ratio or shift.
    pub transformer: bool,
    pub tap_min: Option<f64>,
    pub tap_max: Option<f64>,
    /// Internal index of the bus whose voltage the tap regulates.
    pub regulated_bus: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchedShunt {
    /// Internal bus index.
    pub bus: usize,
    pub b_sp: f64,
    pub b_min: f64,
    pub b_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Info,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    pub shunts: Vec<SwitchedShunt>,
    pub slack: usize,
    #[serde(skip)]
    pub diagnostics: Vec<Diagnostic>,
}

impl GridCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus_lookup(&self) -> HashMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn generator_index(&self, id: usize) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    pub fn branch_index(&self, id: usize) -> Option<usize> {
        self.branches.iter().position(|b| b.id == id)
    }

    pub fn shunt_index(&self, bus: usize) -> Option<usize> {
        self.shunts.iter().position(|s| s.bus == bus)
    }

    pub fn buses_of_type(&self, kind: BusType) -> Vec<usize> {
        (0..self.n_bus()).filter(|&i| self.buses[i].kind == kind).collect()
    }

    /// Generators attached to each bus, in case order.
    pub fn generators_by_bus(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_bus()];
        for (g, gen) in self.generators.iter().enumerate() {
            out[gen.bus].push(g);
        }
        out
    }

    pub fn has_warnings(&self) -> bool {
        self.diagnostics.iter().any(|d| d.severity == Severity::Warning)
    }

    pub(crate) fn note(&mut self, severity: Severity, message: String) {
        match severity {
            Severity::Info => log::info!("{}: {message}", self.name),
            Severity::Warning => log::warn!("{}: {message}", self.name),
        }
        self.diagnostics.push(Diagnostic { severity, message });
    }

    /// Structural checks shared by the parser and hand-built cases.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_bus();
        if n == 0 {
            return Err(Error::InvalidCase("case has no buses".into()));
        }
        if self.slack >= n || self.buses[self.slack].kind != BusType::Slack {
            return Err(Error::InvalidCase("no slack bus".into()));
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusType::Slack).count();
        if slacks != 1 {
            return Err(Error::InvalidCase(format!("{slacks} slack buses; exactly one is supported")));
        }
        for br in &self.branches {
            if br.from >= n || br.to >= n {
                return Err(Error::InvalidCase(format!("branch {} references a missing bus", br.id)));
            }
            if br.x == 0.0 && br.r == 0.0 {
                return Err(Error::InvalidCase(format!("branch {} has zero impedance", br.id)));
            }
            if !(br.tap > 0.0) {
                return Err(Error::InvalidCase(format!("branch {} has nonpositive tap {}", br.id, br.tap)));
            }
            if let (Some(lo), Some(hi)) = (br.tap_min, br.tap_max) {
                if lo > hi || lo <= 0.0 {
                    return Err(Error::InvalidCase(format!("branch {} tap range [{lo}, {hi}] invalid", br.id)));
                }
            }
            if br.regulated_bus.is_some_and(|r| r >= n) {
                return Err(Error::InvalidCase(format!("branch {} regulates a missing bus", br.id)));
            }
        }
        for g in &self.generators {
            if g.bus >= n {
                return Err(Error::InvalidCase(format!("generator {} references a missing bus", g.id)));
            }
            if g.q_min > g.q_max || g.p_min > g.p_max {
                return Err(Error::InvalidCase(format!("generator {} has inverted limits", g.id)));
            }
        }
        for s in &self.shunts {
            if s.bus >= n || s.b_min > s.b_max {
                return Err(Error::InvalidCase(format!("switched shunt at bus index {} invalid", s.bus)));
            }
        }
        let island = self.slack_island();
        let stray = island.iter().filter(|&&c| !c).count();
        if stray > 0 {
            let first = island.iter().position(|&c| !c).unwrap();
            return Err(Error::InvalidCase(format!(
                "{stray} buses are not connected to the slack bus (first: bus {})",
                self.buses[first].id
            )));
        }
        Ok(())
    }

    /// Buses reachable from the slack through branches.
    pub fn slack_island(&self) -> Vec<bool> {
        let n = self.n_bus();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.slack];
        seen[self.slack] = true;
        while let Some(i) = stack.pop() {
            for &k in &adj[i] {
                if !seen[k] {
                    seen[k] = true;
                    stack.push(k);
                }
            }
        }
        seen
    }

    /// Breadth-first hop distance from `start` to every bus.
    pub fn hop_distances(&self, start: usize) -> Vec<usize> {
        let n = self.n_bus();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::from([start]);
        dist[start] = 0;
        while let Some(i) = queue.pop_front() {
            for &k in &adj[i] {
                if dist[k] == usize::MAX {
                    dist[k] = dist[i] + 1;
                    queue.push_back(k);
                }
            }
        }
        dist
    }

    /// Remove the given generators (by id). Buses left without a generator
    /// become PQ; removing every generator at the slack is an error.
    pub fn without_generators(&self, ids: &[usize]) -> Result<GridCase> {
        let mut out = self.clone();
        for &id in ids {
            let g = out
                .generator_index(id)
                .ok_or_else(|| Error::InvalidConfig(format!("generator {id} is not an in-service generator")))?;
            out.generators.remove(g);
        }
        let by_bus = out.generators_by_bus();
        for i in 0..out.n_bus() {
            if by_bus[i].is_empty() {
                match out.buses[i].kind {
                    BusType::PV => out.buses[i].kind = BusType::PQ,
                    BusType::Slack => {
                        return Err(Error::InvalidConfig(format!(
                            "removing generators leaves slack bus {} without generation",
                            out.buses[i].id
                        )))
                    }
                    BusType::PQ => {}
                }
            }
        }
        Ok(out)
    }

    /// Default droop gain: `p_max / 0.05` (5% droop on the machine rating).
    pub fn droop_gain(&self, g: usize) -> f64 {
        let gen = &self.generators[g];
        gen.droop.unwrap_or(gen.p_max.max(0.0) / 0.05)
    }
}

/// Operating point of every quantity that enters the power-balance equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub va: Vec<f64>,
    pub vm: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    /// Tap ratio per branch (1.0 for lines).
    pub tap: Vec<f64>,
    /// Susceptance per switched shunt.
    pub shunt_b: Vec<f64>,
    /// Frequency deviation in p.u. of nominal.
    pub df: f64,
}

impl GridState {
    /// The stored operating point of the case file.
    pub fn from_case(case: &GridCase) -> Self {
        GridState {
            va: case.buses.iter().map(|b| b.va).collect(),
            vm: case.buses.iter().map(|b| b.vm).collect(),
            pg: case.generators.iter().map(|g| g.p_sp).collect(),
            qg: case.generators.iter().map(|g| g.q0).collect(),
            tap: case.branches.iter().map(|b| b.tap).collect(),
            shunt_b: case.shunts.iter().map(|s| s.b_sp).collect(),
            df: 0.0,
        }
    }

    /// `v = 1` (set point at generator buses), `δ = 0` except the slack angle,
    /// devices at their set points.
    pub fn flat(case: &GridCase) -> Self {
        let mut s = Self::from_case(case);
        for (i, b) in case.buses.iter().enumerate() {
            s.va[i] = if i == case.slack { b.va } else { 0.0 };
            s.vm[i] = if b.kind == BusType::PQ { 1.0 } else { b.v_sp };
        }
        s
    }

    pub fn check(&self, case: &GridCase) -> Result<()> {
        let dims = [
            (self.va.len(), case.n_bus()),
            (self.vm.len(), case.n_bus()),
            (self.pg.len(), case.generators.len()),
            (self.qg.len(), case.generators.len()),
            (self.tap.len(), case.branches.len()),
            (self.shunt_b.len(), case.shunts.len()),
        ];
        for (got, expected) in dims {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn bus(id: usize, kind: BusType) -> Bus {
        Bus {
            id,
            kind,
            pd: 0.0,
            qd: 0.0,
            gs: 0.0,
            bs: 0.0,
            vm: 1.0,
            va: 0.0,
            v_sp: 1.0,
            v_min: 0.9,
            v_max: 1.1,
            base_kv: 1.0,
            area: 1,
            zone: 1,
        }
    }

    pub fn line(id: usize, from: usize, to: usize, r: f64, x: f64, b: f64) -> Branch {
        Branch {
            id,
            from,
            to,
            r,
            x,
            b,
            rate_a: 0.0,
            tap: 1.0,
            shift: 0.0,
            transformer: false,
            tap_min: None,
            tap_max: None,
            regulated_bus: None,
        }
    }

    pub fn generator(id: usize, bus: usize) -> Generator {
        Generator {
            id,
            bus,
            p_sp: 0.0,
            q0: 0.0,
            q_min: -10.0,
            q_max: 10.0,
            p_min: 0.0,
            p_max: 10.0,
            vg: 1.0,
            mbase: 100.0,
            droop: None,
        }
    }

    pub fn two_bus(load_p: f64, load_q: f64) -> GridCase {
        let mut b2 = bus(2, BusType::PQ);
        b2.pd = load_p;
        b2.qd = load_q;
        GridCase {
            name: "two_bus".into(),
            base_mva: 100.0,
            buses: vec![bus(1, BusType::Slack), b2],
            generators: vec![generator(1, 0)],
            branches: vec![line(1, 0, 1, 0.0, 0.1, 0.0)],
            shunts: vec![],
            slack: 0,
            diagnostics: vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn islands_are_rejected() {
        let mut c = two_bus(0.5, 0.2);
        c.buses.push(bus(3, BusType::PQ));
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("not connected"), "{err}");
        c.branches.push(line(2, 1, 2, 0.0, 0.1, 0.0));
        c.validate().unwrap();
    }

    #[test]
    fn removing_generators() {
        let mut c = two_bus(0.5, 0.2);
        c.buses[1].kind = BusType::PV;
        c.generators.push(generator(2, 1));
        let c2 = c.without_generators(&[2]).unwrap();
        assert_eq!(c2.buses[1].kind, BusType::PQ);
        assert!(c.without_generators(&[1]).is_err());
        assert!(c.without_generators(&[7]).is_err());
    }

    #[test]
    fn flat_state_uses_set_points() {
        let mut c = two_bus(0.5, 0.2);
        c.buses[0].v_sp = 1.04;
        c.buses[0].va = 0.1;
        c.buses[1].va = 0.3;
        let s = GridState::flat(&c);
        assert_eq!(s.vm, vec![1.04, 1.0]);
        assert_eq!(s.va, vec![0.1, 0.0]);
        s.check(&c).unwrap();
    }
}
