use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::RegulationConfig;
use crate::grid::{GridCase, Severity, SwitchedShunt};

/// Controllable tap range of one branch (by 1-based branch row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapSpec {
    pub branch: usize,
    pub min: f64,
    pub max: f64,
    /// External bus number; defaults to the branch's to-bus.
    #[serde(default)]
    pub regulated_bus: Option<usize>,
}

/// Switched shunt at a bus, in MVAr injected at 1 p.u. voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntSpec {
    pub bus: usize,
    pub min_mvar: f64,
    pub max_mvar: f64,
    /// Defaults to the bus's Bs column, which then stops being a fixed shunt.
    #[serde(default)]
    pub set_mvar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopEntry {
    /// 1-based generator row.
    pub id: usize,
    /// p.u. power per p.u. frequency.
    pub nu: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopSpec {
    /// Droop in percent applied as `ν = p_max / (percent / 100)`.
    #[serde(default)]
    pub default_percent: Option<f64>,
    #[serde(default)]
    pub generators: Vec<DroopEntry>,
}

/// Regulation data that MATPOWER files cannot carry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    #[serde(default = "one")]
    pub version: u32,
    #[serde(default)]
    pub taps: Vec<TapSpec>,
    #[serde(default)]
    pub shunts: Vec<ShuntSpec>,
    #[serde(default)]
    pub droop: DroopSpec,
    #[serde(default)]
    pub controls: Option<RegulationConfig>,
}

fn one() -> u32 {
    1
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Sidecar> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let sc: Sidecar = serde_json::from_str(&text)?;
    if sc.version != 1 {
        return Err(Error::InvalidConfig(format!("sidecar version {} unsupported", sc.version)));
    }
    Ok(sc)
}

/// Attach tap ranges, switched shunts and droop gains to `case`.
pub fn apply_sidecar(case: &mut GridCase, sc: &Sidecar) -> Result<()> {
    let base = case.base_mva;
    for t in &sc.taps {
        let k = case
            .branch_index(t.branch)
            .ok_or_else(|| Error::InvalidConfig(format!("sidecar tap: branch {} not in service", t.branch)))?;
        if !(t.min > 0.0 && t.min <= t.max) {
            return Err(Error::InvalidConfig(format!("sidecar tap: branch {} range [{}, {}]", t.branch, t.min, t.max)));
        }
        let reg = match t.regulated_bus {
            Some(id) => Some(
                case.bus_index(id)
                    .ok_or_else(|| Error::InvalidConfig(format!("sidecar tap: regulated bus {id} unknown")))?,
            ),
            None => None,
        };
        let br = &mut case.branches[k];
        br.tap_min = Some(t.min);
        br.tap_max = Some(t.max);
        br.regulated_bus = reg.or(br.regulated_bus);
        if !br.transformer {
            let id = br.id;
            case.note(Severity::Info, format!("branch {id} has no tap in the case file; treated as a transformer"));
            case.branches[k].transformer = true;
        }
    }
    for s in &sc.shunts {
        let i = case
            .bus_index(s.bus)
            .ok_or_else(|| Error::InvalidConfig(format!("sidecar shunt: bus {} unknown", s.bus)))?;
        if s.min_mvar > s.max_mvar {
            return Err(Error::InvalidConfig(format!("sidecar shunt: bus {} range inverted", s.bus)));
        }
        add_switched_shunt(case, i, s.set_mvar.map(|v| v / base), s.min_mvar / base, s.max_mvar / base);
    }
    if let Some(p) = sc.droop.default_percent {
        if !(p > 0.0) {
            return Err(Error::InvalidConfig(format!("droop percent {p} must be positive")));
        }
        for g in case.generators.iter_mut() {
            g.droop = Some(g.p_max.max(0.0) / (p / 100.0));
        }
    }
    for d in &sc.droop.generators {
        if !(d.nu >= 0.0) {
            return Err(Error::InvalidConfig(format!("droop for generator {} must be nonnegative", d.id)));
        }
        let g = case
            .generator_index(d.id)
            .ok_or_else(|| Error::InvalidConfig(format!("sidecar droop: generator {} not in service", d.id)))?;
        case.generators[g].droop = Some(d.nu);
    }
    Ok(())
}

/// Make the shunt at bus `i` switchable. The set point defaults to the bus's
/// fixed susceptance, which is moved into the device.
pub fn add_switched_shunt(case: &mut GridCase, i: usize, b_sp: Option<f64>, b_min: f64, b_max: f64) {
    let fixed = std::mem::take(&mut case.buses[i].bs);
    let b_sp = b_sp.unwrap_or(fixed);
    let sh = SwitchedShunt { bus: i, b_sp, b_min: b_min.min(b_sp), b_max: b_max.max(b_sp) };
    match case.shunt_index(i) {
        Some(k) => case.shunts[k] = sh,
        None => case.shunts.push(sh),
    }
}
