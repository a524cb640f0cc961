use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{RegulationSummary, NOMINAL_HZ};
use crate::grid::{GridCase, GridState};
use crate::newton::{SolveReport, SolveStatus};

pub const SCHEMA_VERSION: u32 = 1;

/// Header of the long-format CSV: one value per line.
pub const CSV_HEADER: &str = "record,id,field,value,unit";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    pub vm: f64,
    pub va_deg: f64,
    pub va_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub id: usize,
    pub bus: usize,
    pub pg_pu: f64,
    pub qg_pu: f64,
    pub pg_mw: f64,
    pub qg_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub id: usize,
    pub tap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuntRecord {
    pub bus: usize,
    pub b_pu: f64,
    pub mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRecord {
    pub df_pu: f64,
    pub hz: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

/// Run-dependent fields kept apart so the rest of the file is reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub wall_time_s: f64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub schema_version: u32,
    pub case: String,
    pub base_mva: f64,
    pub solver: String,
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_residual: f64,
    pub q_order: Option<f64>,
    pub frequency: FrequencyRecord,
    pub summary: Option<RegulationSummary>,
    pub buses: Vec<BusRecord>,
    pub generators: Vec<GeneratorRecord>,
    pub branches: Vec<BranchRecord>,
    pub shunts: Vec<ShuntRecord>,
    pub variables: Vec<NamedValue>,
    pub metadata: Metadata,
}

impl SolutionFile {
    pub fn new(
        case: &GridCase,
        state: &GridState,
        report: &SolveReport,
        solver: &str,
        variables: &[(String, f64)],
    ) -> Self {
        let base = case.base_mva;
        let hz = NOMINAL_HZ * (1.0 + state.df);
        SolutionFile {
            schema_version: SCHEMA_VERSION,
            case: case.name.clone(),
            base_mva: base,
            solver: solver.to_string(),
            status: report.status,
            iterations: report.iterations,
            final_residual: report.final_residual(),
            q_order: report.q_order,
            frequency: FrequencyRecord { df_pu: state.df, hz, text: format!("{hz:.2} Hz") },
            summary: report.regulation.clone(),
            buses: case
                .buses
                .iter()
                .enumerate()
                .map(|(i, b)| BusRecord { id: b.id, vm: state.vm[i], va_deg: state.va[i].to_degrees(), va_rad: state.va[i] })
                .collect(),
            generators: case
                .generators
                .iter()
                .enumerate()
                .map(|(g, gen)| GeneratorRecord {
                    id: gen.id,
                    bus: case.buses[gen.bus].id,
                    pg_pu: state.pg[g],
                    qg_pu: state.qg[g],
                    pg_mw: state.pg[g] * base,
                    qg_mvar: state.qg[g] * base,
                })
                .collect(),
            branches: case
                .branches
                .iter()
                .enumerate()
                .filter(|(_, b)| b.transformer)
                .map(|(k, b)| BranchRecord { id: b.id, tap: state.tap[k] })
                .collect(),
            shunts: case
                .shunts
                .iter()
                .enumerate()
                .map(|(k, s)| ShuntRecord { bus: case.buses[s.bus].id, b_pu: state.shunt_b[k], mvar: state.shunt_b[k] * base })
                .collect(),
            variables: variables.iter().map(|(n, v)| NamedValue { name: n.clone(), value: *v }).collect(),
            metadata: Metadata { wall_time_s: report.wall_time.as_secs_f64(), tool_version: env!("CARGO_PKG_VERSION").into() },
        }
    }

    /// Rebuild the operating point on `case` (matched by ids).
    pub fn state(&self, case: &GridCase) -> Result<GridState> {
        let mut s = GridState::from_case(case);
        for b in &self.buses {
            let i = case.bus_index(b.id).ok_or_else(|| Error::InvalidCase(format!("solution bus {} not in case", b.id)))?;
            s.vm[i] = b.vm;
            s.va[i] = b.va_rad;
        }
        for g in &self.generators {
            if let Some(k) = case.generator_index(g.id) {
                s.pg[k] = g.pg_pu;
                s.qg[k] = g.qg_pu;
            }
        }
        for br in &self.branches {
            if let Some(k) = case.branch_index(br.id) {
                s.tap[k] = br.tap;
            }
        }
        for sh in &self.shunts {
            if let Some(k) = case.bus_index(sh.bus).and_then(|i| case.shunt_index(i)) {
                s.shunt_b[k] = sh.b_pu;
            }
        }
        s.df = self.frequency.df_pu;
        Ok(s)
    }

    pub fn named_values(&self) -> Vec<(String, f64)> {
        self.variables.iter().map(|v| (v.name.clone(), v.value)).collect()
    }
}

pub fn write_solution(sol: &SolutionFile, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => Ok(serde_json::to_string_pretty(sol)? + "\n"),
        OutputFormat::Csv => Ok(to_csv(sol)),
    }
}

fn to_csv(sol: &SolutionFile) -> String {
    let mut s = String::new();
    let mut row = |rec: &str, id: &dyn std::fmt::Display, field: &str, value: f64, unit: &str| {
        let _ = writeln!(s, "{rec},{id},{field},{value:?},{unit}");
    };
    row("system", &0, "schema_version", sol.schema_version as f64, "");
    row("system", &0, "iterations", sol.iterations as f64, "");
    row("system", &0, "final_residual", sol.final_residual, "pu");
    row("system", &0, "df", sol.frequency.df_pu, "pu");
    row("system", &0, "frequency", sol.frequency.hz, "Hz");
    if let Some(sum) = &sol.summary {
        row("system", &0, "max_v_deviation", sum.max_v_deviation, "pu");
        row("system", &0, "violations", sum.violations.len() as f64, "");
    }
    for b in &sol.buses {
        row("bus", &b.id, "vm", b.vm, "pu");
        row("bus", &b.id, "va", b.va_deg, "deg");
    }
    for g in &sol.generators {
        row("gen", &g.id, "pg", g.pg_mw, "MW");
        row("gen", &g.id, "qg", g.qg_mvar, "MVAr");
    }
    for b in &sol.branches {
        row("branch", &b.id, "tap", b.tap, "pu");
    }
    for sh in &sol.shunts {
        row("shunt", &sh.bus, "b", sh.mvar, "MVAr");
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    out.push_str(&s);
    for v in &sol.variables {
        let _ = writeln!(out, "variable,0,{},{:?},", v.name, v.value);
    }
    out
}

pub fn read_solution(text: &str) -> Result<SolutionFile> {
    let sol: SolutionFile = serde_json::from_str(text)?;
    if sol.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!("solution schema {} unsupported", sol.schema_version)));
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::two_bus;

    fn sample() -> (GridCase, GridState, SolveReport) {
        let c = two_bus(0.5, 0.2);
        let mut s = GridState::flat(&c);
        s.va[1] = -0.123456789012345;
        s.vm[1] = 0.987654321;
        s.pg[0] = 0.5012345;
        s.df = -0.00133;
        let mut r = SolveReport::new();
        r.status = SolveStatus::Converged;
        r.residual_history = vec![1.0, 1e-10];
        (c, s, r)
    }

    #[test]
    fn json_round_trip() {
        let (c, s, r) = sample();
        let f = SolutionFile::new(&c, &s, &r, "mcp", &[("vm[bus 2]".into(), s.vm[1])]);
        assert_eq!(f.frequency.text, "59.92 Hz");
        let text = write_solution(&f, OutputFormat::Json).unwrap();
        let back = read_solution(&text).unwrap();
        assert_eq!(back, f);
        let s2 = back.state(&c).unwrap();
        for (a, b) in s.va.iter().chain(&s.vm).chain(&s.pg).zip(s2.va.iter().chain(&s2.vm).chain(&s2.pg)) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(s2.df, s.df);
    }

    #[test]
    fn csv_layout() {
        let (c, s, r) = sample();
        let f = SolutionFile::new(&c, &s, &r, "mcp", &[]);
        let text = write_solution(&f, OutputFormat::Csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert!(text.lines().all(|l| l.split(',').count() == 5));
        assert!(text.contains("system,0,frequency,59.920"), "{text}");
    }
}
