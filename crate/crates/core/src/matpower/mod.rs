//! MATPOWER version 2 case files, the regulation sidecar and solution files.

mod parse;
mod sidecar;
mod solution;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Branch, Bus, BusType, Generator, GridCase, Severity};

pub use parse::{scan, RawCase, Value};
pub use sidecar::{add_switched_shunt, apply_sidecar, read_sidecar, DroopEntry, DroopSpec, ShuntSpec, Sidecar, TapSpec};
pub use solution::{
    read_solution, write_solution, BranchRecord, BusRecord, FrequencyRecord, GeneratorRecord, Metadata, NamedValue,
    OutputFormat, ShuntRecord, SolutionFile, CSV_HEADER, SCHEMA_VERSION,
};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

pub fn read_case(path: impl AsRef<Path>) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut case = parse_case(&text)?;
    if case.name.is_empty() {
        case.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(case)
}

fn table<'a>(raw: &'a RawCase, field: &str, min_cols: usize) -> Result<(&'a [Vec<f64>], usize)> {
    let (rows, line) = raw
        .matrix(field)
        .ok_or_else(|| Error::parse(0, format!("missing mpc.{field}")))?;
    if let Some(first) = rows.first() {
        let w = first.len();
        if w < min_cols {
            return Err(Error::parse(line, format!("mpc.{field} has {w} columns, need at least {min_cols}")));
        }
        if let Some(k) = rows.iter().position(|r| r.len() != w) {
            return Err(Error::parse(line + k, format!("inconsistent row lengths in mpc.{field}")));
        }
        for (k, r) in rows.iter().enumerate() {
            if r.iter().any(|v| v.is_nan()) {
                return Err(Error::parse(line + k, format!("NaN in mpc.{field} row {}", k + 1)));
            }
        }
    }
    Ok((rows, line))
}

fn as_id(v: f64, what: &str, line: usize) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(Error::parse(line, format!("{what} {v} is not a positive integer")))
    }
}

/// Parse a MATPOWER version 2 case. Out-of-service generators and branches
/// and isolated (type 4) buses are dropped; angles become radians and
/// powers per-unit on `baseMVA`.
pub fn parse_case(text: &str) -> Result<GridCase> {
    let raw = scan(text)?;
    build_case(&raw)
}

pub fn build_case(raw: &RawCase) -> Result<GridCase> {
    match raw.string("version") {
        Some("2") => {}
        Some(v) => return Err(Error::parse(0, format!("unsupported case format version '{v}'"))),
        None => return Err(Error::parse(0, "unknown case format version (mpc.version missing)")),
    }
    let base = raw.scalar("baseMVA").ok_or_else(|| Error::parse(0, "missing mpc.baseMVA"))?;
    if !(base > 0.0) || !base.is_finite() {
        return Err(Error::parse(0, format!("baseMVA {base} must be positive")));
    }
    let (bus_rows, bus_line) = table(raw, "bus", BUS_COLS)?;
    let (gen_rows, gen_line) = table(raw, "gen", GEN_COLS)?;
    let (br_rows, br_line) = table(raw, "branch", BRANCH_COLS)?;

    let mut case = GridCase {
        name: raw.name.clone(),
        base_mva: base,
        buses: Vec::with_capacity(bus_rows.len()),
        generators: Vec::new(),
        branches: Vec::new(),
        shunts: Vec::new(),
        slack: usize::MAX,
        diagnostics: Vec::new(),
    };
    for extra in ["gencost", "dcline"] {
        if raw.fields.contains_key(extra) {
            case.note(Severity::Info, format!("mpc.{extra} ignored"));
        }
    }

    let mut all_ids = HashMap::new();
    let mut index = HashMap::new();
    let mut isolated = 0;
    for (k, r) in bus_rows.iter().enumerate() {
        let line = bus_line + k;
        let id = as_id(r[0], "bus number", line)?;
        if all_ids.insert(id, k).is_some() {
            return Err(Error::parse(line, format!("duplicate bus number {id}")));
        }
        let kind = match r[1] as i64 {
            1 => BusType::PQ,
            2 => BusType::PV,
            3 => BusType::Slack,
            4 => {
                isolated += 1;
                continue;
            }
            t => return Err(Error::parse(line, format!("bus {id} has unknown type {t}"))),
        };
        index.insert(id, case.buses.len());
        case.buses.push(Bus {
            id,
            kind,
            pd: r[2] / base,
            qd: r[3] / base,
            gs: r[4] / base,
            bs: r[5] / base,
            area: r[6].max(0.0) as usize,
            vm: r[7],
            va: r[8].to_radians(),
            base_kv: r[9],
            zone: r[10].max(0.0) as usize,
            v_max: r[11],
            v_min: r[12],
            v_sp: r[7],
        });
    }
    if isolated > 0 {
        case.note(Severity::Info, format!("{isolated} isolated buses dropped"));
    }

    let resolve = |id: f64, line: usize, what: &str| -> Result<Option<usize>> {
        let id = as_id(id, "bus reference", line)?;
        match (index.get(&id), all_ids.contains_key(&id)) {
            (Some(&i), _) => Ok(Some(i)),
            (None, true) => Ok(None),
            (None, false) => Err(Error::parse(line, format!("{what} references missing bus {id}"))),
        }
    };

    let mut dropped_gen = 0;
    for (k, r) in gen_rows.iter().enumerate() {
        let line = gen_line + k;
        let bus = resolve(r[0], line, &format!("generator {}", k + 1))?;
        if r[7] <= 0.0 {
            dropped_gen += 1;
            continue;
        }
        let Some(bus) = bus else {
            case.note(Severity::Info, format!("generator {} on an isolated bus dropped", k + 1));
            continue;
        };
        case.generators.push(Generator {
            id: k + 1,
            bus,
            p_sp: r[1] / base,
            q0: r[2] / base,
            q_max: r[3] / base,
            q_min: r[4] / base,
            vg: r[5],
            mbase: r[6],
            p_max: r[8] / base,
            p_min: r[9] / base,
            droop: None,
        });
    }
    if dropped_gen > 0 {
        case.note(Severity::Info, format!("{dropped_gen} out-of-service generators dropped"));
    }

    let mut dropped_br = 0;
    for (k, r) in br_rows.iter().enumerate() {
        let line = br_line + k;
        let from = resolve(r[0], line, &format!("branch {}", k + 1))?;
        let to = resolve(r[1], line, &format!("branch {}", k + 1))?;
        if r[10] <= 0.0 {
            dropped_br += 1;
            continue;
        }
        let (Some(from), Some(to)) = (from, to) else {
            case.note(Severity::Warning, format!("in-service branch {} touches an isolated bus; dropped", k + 1));
            continue;
        };
        if r[2] == 0.0 && r[3] == 0.0 {
            return Err(Error::parse(line, format!("branch {} has zero impedance", k + 1)));
        }
        let ratio = r[8];
        let shift = r[9];
        case.branches.push(Branch {
            id: k + 1,
            from,
            to,
            r: r[2],
            x: r[3],
            b: r[4],
            rate_a: r[5],
            tap: if ratio == 0.0 { 1.0 } else { ratio },
            shift: shift.to_radians(),
            transformer: ratio != 0.0 || shift != 0.0,
            tap_min: None,
            tap_max: None,
            regulated_bus: None,
        });
    }
    if dropped_br > 0 {
        case.note(Severity::Info, format!("{dropped_br} out-of-service branches dropped"));
    }

    // slack
    let slacks: Vec<usize> = case.buses_of_type(BusType::Slack);
    match slacks.as_slice() {
        [] => return Err(Error::InvalidCase("no slack bus".into())),
        [s] => case.slack = *s,
        [s, rest @ ..] => {
            case.slack = *s;
            for &r in rest {
                case.buses[r].kind = BusType::PV;
            }
            let msg = format!("{} extra reference buses treated as PV", rest.len());
            case.note(Severity::Warning, msg);
        }
    }

    // generator set points and bus types
    let by_bus = case.generators_by_bus();
    let mut demoted = 0;
    for i in 0..case.n_bus() {
        let gens = &by_bus[i];
        if gens.is_empty() {
            if case.buses[i].kind == BusType::PV {
                case.buses[i].kind = BusType::PQ;
                demoted += 1;
            }
            continue;
        }
        let vg = case.generators[gens[0]].vg;
        if case.buses[i].kind != BusType::PQ {
            case.buses[i].v_sp = vg;
        }
        if gens.iter().any(|&g| (case.generators[g].vg - vg).abs() > 1e-9) {
            let msg = format!("bus {} generators disagree on VG; using generator {}", case.buses[i].id, case.generators[gens[0]].id);
            case.note(Severity::Warning, msg);
        }
    }
    if demoted > 0 {
        case.note(Severity::Info, format!("{demoted} PV buses without an in-service generator treated as PQ"));
    }
    case.validate()?;
    Ok(case)
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "Inf".into()
    } else if v == f64::NEG_INFINITY {
        "-Inf".into()
    } else {
        format!("{v:?}")
    }
}

/// Serialize a case back to MATPOWER format (in-service elements only).
/// Bus types are written as used by the model.
pub fn write_case(case: &GridCase) -> String {
    let base = case.base_mva;
    let name = if case.name.is_empty() { "case" } else { &case.name };
    let mut s = String::new();
    let _ = writeln!(s, "function mpc = {name}\n\n%% MATPOWER Case Format : Version 2\nmpc.version = '2';\n");
    let _ = writeln!(s, "mpc.baseMVA = {};\n", num(base));
    s.push_str("%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin\nmpc.bus = [\n");
    for b in &case.buses {
        let row = [
            b.id as f64,
            b.kind.matpower_code() as f64,
            b.pd * base,
            b.qd * base,
            b.gs * base,
            b.bs * base,
            b.area as f64,
            b.vm,
            b.va.to_degrees(),
            b.base_kv,
            b.zone as f64,
            b.v_max,
            b.v_min,
        ];
        let _ = writeln!(s, "\t{};", row.map(num).join("\t"));
    }
    s.push_str("];\n\n%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin\nmpc.gen = [\n");
    for g in &case.generators {
        let vg = if case.buses[g.bus].kind == BusType::PQ { g.vg } else { case.buses[g.bus].v_sp };
        let row = [
            case.buses[g.bus].id as f64,
            g.p_sp * base,
            g.q0 * base,
            g.q_max * base,
            g.q_min * base,
            vg,
            g.mbase,
            1.0,
            g.p_max * base,
            g.p_min * base,
        ];
        let _ = writeln!(s, "\t{};", row.map(num).join("\t"));
    }
    s.push_str("];\n\n%% fbus tbus r x b rateA rateB rateC ratio angle status\nmpc.branch = [\n");
    for br in &case.branches {
        let ratio = if br.transformer { br.tap } else { 0.0 };
        let row = [
            case.buses[br.from].id as f64,
            case.buses[br.to].id as f64,
            br.r,
            br.x,
            br.b,
            br.rate_a,
            0.0,
            0.0,
            ratio,
            br.shift.to_degrees(),
            1.0,
        ];
        let _ = writeln!(s, "\t{};", row.map(num).join("\t"));
    }
    s.push_str("];\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const TWO_BUS: &str = "function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1.02	0	230	1	1.1	0.9;
	2	1	50	20	0	10	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	60	0	100	-100	1.02	100	1	200	0;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	0	0	0	0	0	1;
];
";

    #[test]
    fn two_bus_fixture() {
        let c = parse_case(TWO_BUS).unwrap();
        assert_eq!(c.name, "two_bus");
        assert_eq!(c.n_bus(), 2);
        assert_eq!(c.slack, 0);
        assert_eq!(c.buses[1].kind, BusType::PQ);
        assert_eq!(c.branches.len(), 1);
        assert_eq!(c.buses[1].pd, 0.5);
        assert_eq!(c.buses[1].qd, 0.2);
        assert_eq!(c.buses[1].bs, 0.1);
        assert_eq!(c.generators[0].p_max, 2.0);
        assert_eq!(c.buses[0].v_sp, 1.02);
        assert!(!c.branches[0].transformer);
        assert_eq!(c.branches[0].tap, 1.0);
        assert!(!c.has_warnings());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(parse_case(&TWO_BUS.replace("'2'", "'1'")).unwrap_err().to_string().contains("version"));
        let e = parse_case(&TWO_BUS.replace("\t1\t3\t0", "\t1\t1\t0")).unwrap_err().to_string();
        assert!(e.contains("no slack"), "{e}");
        let e = parse_case(&TWO_BUS.replace("\t1\t2\t0.01", "\t1\t7\t0.01")).unwrap_err().to_string();
        assert!(e.contains("missing bus 7"), "{e}");
        let e = parse_case(&TWO_BUS.replace("0.9;\n];", "0.9 1;\n];")).unwrap_err().to_string();
        assert!(e.contains("inconsistent row lengths"), "{e}");
    }

    #[test]
    fn out_of_service_rows_are_dropped() {
        let text = TWO_BUS.replace(
            "];\nmpc.branch",
            "\t2\t10\t0\t10\t-10\t1\t100\t0\t20\t0;\n];\nmpc.branch",
        );
        let c = parse_case(&text).unwrap();
        assert_eq!(c.generators.len(), 1);
        assert_eq!(c.generators[0].id, 1);
    }

    #[test]
    fn write_then_parse() {
        let c = parse_case(TWO_BUS).unwrap();
        let c2 = parse_case(&write_case(&c)).unwrap();
        assert_eq!(c.buses.len(), c2.buses.len());
        for (a, b) in c.buses.iter().zip(&c2.buses) {
            assert!((a.pd - b.pd).abs() <= 1e-12 * a.pd.abs().max(1.0));
            assert_eq!(a.kind, b.kind);
        }
        assert_eq!(c.branches, c2.branches);
    }
}
