//! Batch driver behind the command-line tool: single solves, solver
//! comparisons, cumulative generator-outage sweeps and device bound sweeps.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fb_solve, newton_raphson, nr_pv_pq, FbOptions, NrOptions};
use crate::error::{Error, Result};
use crate::formulation::{assemble, regulation_summary, stored_operating_point, voltage_summary, PowerFlowMcp, RegulationConfig};
use crate::grid::{GridCase, GridState};
use crate::matpower::{apply_sidecar, read_case, read_sidecar, read_solution, OutputFormat, Sidecar, SolutionFile};
use crate::newton::{solve, SolveReport, SolveStatus, SolverOptions};

/// Environment variable capping batch parallelism.
pub const THREADS_ENV: &str = "MCP_PF_THREADS";

/// Default bound-sweep widths: 0% to 10% in steps of 2%.
pub const DEFAULT_WIDTHS: [f64; 6] = [0.0, 0.02, 0.04, 0.06, 0.08, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Mcp,
    Nr,
    Fb,
}

impl FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcp" => Ok(SolverKind::Mcp),
            "nr" => Ok(SolverKind::Nr),
            "fb" => Ok(SolverKind::Fb),
            other => Err(Error::InvalidConfig(format!("unknown solver '{other}' (mcp, nr or fb)"))),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Mcp => "mcp",
            SolverKind::Nr => "nr",
            SolverKind::Fb => "fb",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Controls {
    pub gen_voltage: bool,
    pub taps: bool,
    pub shunts: bool,
    pub frequency: bool,
}

impl FromStr for Controls {
    type Err = Error;
    /// Comma-separated list of `gen-voltage`, `taps`, `shunts`, `frequency`;
    /// `none` or an empty string turns everything off.
    fn from_str(s: &str) -> Result<Self> {
        let mut c = Controls::default();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match item {
                "gen-voltage" => c.gen_voltage = true,
                "taps" => c.taps = true,
                "shunts" => c.shunts = true,
                "frequency" => c.frequency = true,
                "none" => {}
                other => return Err(Error::InvalidConfig(format!("unknown control '{other}'"))),
            }
        }
        Ok(c)
    }
}

impl fmt::Display for Controls {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.gen_voltage, "gen-voltage"),
            (self.taps, "taps"),
            (self.shunts, "shunts"),
            (self.frequency, "frequency"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

/// Where a solve without a warm-start file begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPoint {
    /// Staged solve from a flat start.
    #[default]
    Flat,
    /// The operating point stored in the case file.
    Case,
}

impl FromStr for StartPoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(StartPoint::Flat),
            "case" => Ok(StartPoint::Case),
            other => Err(Error::InvalidConfig(format!("unknown start '{other}' (flat or case)"))),
        }
    }
}

/// Everything one invocation needs. Also the schema of the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub case: PathBuf,
    /// Extra cases for `compare`.
    pub cases: Vec<PathBuf>,
    pub sidecar: Option<PathBuf>,
    pub controls: Controls,
    pub solver: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<PathBuf>,
    pub start: StartPoint,
    pub outages: Vec<usize>,
    pub widths: Vec<f64>,
    /// Multiplies every droop gain; used to calibrate frequency sweeps.
    pub droop_scale: f64,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    pub verbose: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            case: PathBuf::new(),
            cases: Vec::new(),
            sidecar: None,
            controls: Controls { gen_voltage: true, ..Controls::default() },
            solver: SolverKind::Mcp,
            tol: 1e-8,
            max_iter: 50,
            warm_start: None,
            start: StartPoint::Flat,
            outages: Vec::new(),
            widths: DEFAULT_WIDTHS.to_vec(),
            droop_scale: 1.0,
            format: OutputFormat::Json,
            out: None,
            verbose: false,
        }
    }
}

impl RunSpec {
    pub fn for_case(case: impl Into<PathBuf>) -> Self {
        RunSpec { case: case.into(), ..Self::default() }
    }

    pub fn read_config(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { tol: self.tol, max_iter: self.max_iter, verbose: self.verbose, ..SolverOptions::default() }
    }

    fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig("tol must be positive and max-iter at least 1".into()));
        }
        if !(self.droop_scale > 0.0) {
            return Err(Error::InvalidConfig("droop scale must be positive".into()));
        }
        if let Some(w) = self.widths.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(format!("width {w} must be a nonnegative number")));
        }
        Ok(())
    }
}

/// Process exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Converged = 0,
    InputError = 1,
    NotConverged = 2,
}

impl Exit {
    pub fn from_status(s: SolveStatus) -> Self {
        if s == SolveStatus::Converged {
            Exit::Converged
        } else {
            Exit::NotConverged
        }
    }

    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Case plus sidecar, with droop gains scaled by `spec.droop_scale`.
pub fn load_case(spec: &RunSpec) -> Result<(GridCase, Option<Sidecar>)> {
    load_case_from(&spec.case, spec)
}

fn load_case_from(path: &Path, spec: &RunSpec) -> Result<(GridCase, Option<Sidecar>)> {
    let mut case = read_case(path)?;
    let sidecar = match &spec.sidecar {
        Some(p) => {
            let sc = read_sidecar(p)?;
            apply_sidecar(&mut case, &sc)?;
            Some(sc)
        }
        None => None,
    };
    if spec.droop_scale != 1.0 {
        for g in 0..case.generators.len() {
            case.generators[g].droop = Some(case.droop_gain(g) * spec.droop_scale);
        }
    }
    case.validate()?;
    Ok((case, sidecar))
}

/// Regulation configuration for the requested controls: tap devices are the
/// branches with tap ranges, shunt devices the switched shunts of the case.
pub fn regulation_config(case: &GridCase, controls: Controls, sidecar: Option<&Sidecar>) -> Result<RegulationConfig> {
    let mut config = sidecar.and_then(|s| s.controls.clone()).unwrap_or_default();
    config.gen_voltage_control |= controls.gen_voltage;
    config.frequency_control |= controls.frequency;
    if controls.taps && config.tap_control.is_empty() {
        config.tap_control =
            case.branches.iter().filter(|b| b.tap_min.is_some() && b.tap_max.is_some()).map(|b| b.id).collect();
        if config.tap_control.is_empty() {
            return Err(Error::InvalidConfig("tap control requested but no branch has a tap range (use a sidecar)".into()));
        }
    }
    if controls.shunts && config.shunt_control.is_empty() {
        config.shunt_control = case.shunts.iter().map(|s| case.buses[s.bus].id).collect();
        if config.shunt_control.is_empty() {
            return Err(Error::InvalidConfig("shunt control requested but the case has no switched shunts".into()));
        }
    }
    Ok(config)
}

/// A solved (or failed) run with everything needed for reporting.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub case: GridCase,
    pub state: GridState,
    pub report: SolveReport,
    pub variables: Vec<(String, f64)>,
    pub solver: SolverKind,
}

impl RunOutcome {
    pub fn solution_file(&self) -> SolutionFile {
        SolutionFile::new(&self.case, &self.state, &self.report, &self.solver.to_string(), &self.variables)
    }

    pub fn max_deviation(&self) -> f64 {
        self.report.regulation.as_ref().map_or(f64::NAN, |r| r.max_v_deviation)
    }

    /// One line with the columns of a solver table: iterations, seconds, max |v − v_sp|.
    pub fn summary_line(&self) -> String {
        let r = &self.report;
        let reg = r.regulation.clone().unwrap_or_else(|| voltage_summary(&self.case, &self.state));
        format!(
            "{} {} {:?} iter {} time {:.3} s max|v-vsp| {:.2e} residual {:.1e} freq {} violations {}",
            self.case.name,
            self.solver,
            r.status,
            r.iterations,
            r.wall_time.as_secs_f64(),
            reg.max_v_deviation,
            r.final_residual(),
            reg.frequency_text(),
            reg.violation_count()
        )
    }
}

/// Append `next` to `acc` as a later stage of the same run. The starting
/// residual of `next` is dropped so the history keeps one entry per iterate.
fn chain_reports(acc: &mut SolveReport, next: SolveReport) {
    acc.iterations += next.iterations;
    acc.residual_history.extend(next.residual_history.iter().skip(1));
    acc.merit_history.extend(next.merit_history.iter().skip(1));
    let offset = acc.trace.len();
    acc.trace.extend(next.trace.into_iter().map(|mut r| {
        r.iteration += offset;
        r
    }));
    acc.status = next.status;
    acc.message = next.message;
    acc.regulation = next.regulation;
    acc.wall_time += next.wall_time;
    acc.q_order = crate::newton::estimate_q_order(&next.residual_history);
}

/// Solve the stages of `ladder` in order, each warm-started from the last;
/// the final stage is `problem`. Stops at the first nonconvergent stage.
fn run_ladder(
    case: &GridCase,
    ladder: &[RegulationConfig],
    problem: &PowerFlowMcp,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let mut names: Option<Vec<(String, f64)>> = None;
    let mut total: Option<SolveReport> = None;
    for cfg in ladder {
        let p = assemble(case, cfg)?;
        let (x, mut rep) = solve(&p, &p.initial_point(names.as_deref())?, opts)?;
        rep.regulation = Some(regulation_summary(&p, &x));
        let converged = rep.converged();
        names = Some(p.named_values(&x));
        match total.as_mut() {
            None => total = Some(rep),
            Some(t) => chain_reports(t, rep),
        }
        if !converged {
            let x = problem.initial_point(names.as_deref()).unwrap_or_else(|_| problem.flat_start());
            return Ok((x, total.unwrap()));
        }
    }
    let (x, mut rep) = solve(problem, &problem.initial_point(names.as_deref())?, opts)?;
    rep.regulation = Some(regulation_summary(problem, &x));
    match total {
        None => Ok((x, rep)),
        Some(mut t) => {
            chain_reports(&mut t, rep);
            Ok((x, t))
        }
    }
}

/// Josephy–Newton on the full configuration. Without a warm start the plain
/// power-flow problem is solved first from a flat start and the controls are
/// added warm-started from it; if that fails, generator voltage control is
/// inserted as an intermediate stage. Iterations of every attempt are counted.
pub fn solve_mcp(
    case: &GridCase,
    config: &RegulationConfig,
    warm: Option<&[(String, f64)]>,
    opts: &SolverOptions,
) -> Result<(PowerFlowMcp, Vec<f64>, SolveReport)> {
    let problem = assemble(case, config)?;
    if let Some(w) = warm {
        let x0 = problem.initial_point(Some(w))?;
        let (x, mut rep) = solve(&problem, &x0, opts)?;
        rep.regulation = Some(regulation_summary(&problem, &x));
        return Ok((problem, x, rep));
    }
    let stage_a = RegulationConfig::stage_a();
    let stage_b = RegulationConfig { gen_voltage_control: config.gen_voltage_control, ..RegulationConfig::default() };
    let mut ladders: Vec<Vec<RegulationConfig>> = vec![vec![]];
    if *config != stage_a {
        ladders = vec![vec![stage_a.clone()]];
        if stage_b != stage_a && stage_b != *config {
            ladders.push(vec![stage_a, stage_b]);
        }
    }
    let mut result: Option<(Vec<f64>, SolveReport)> = None;
    for ladder in &ladders {
        let (x, rep) = run_ladder(case, ladder, &problem, opts)?;
        let done = rep.converged();
        result = Some(match result {
            None => (x, rep),
            Some((_, mut prev)) => {
                chain_reports(&mut prev, rep);
                (x, prev)
            }
        });
        if done {
            break;
        }
    }
    let (x, rep) = result.expect("at least one ladder");
    Ok((problem, x, rep))
}

/// Solve `case` with `solver`. NR accepts only generator voltage control
/// (with PV–PQ switching) or none (plain power flow).
pub fn run_solver(
    case: &GridCase,
    config: &RegulationConfig,
    solver: SolverKind,
    warm: Option<&[(String, f64)]>,
    spec: &RunSpec,
) -> Result<RunOutcome> {
    let opts = spec.solver_options();
    match solver {
        SolverKind::Mcp => {
            let (p, x, report) = solve_mcp(case, config, warm, &opts)?;
            let state = p.complete_state(&x)?;
            Ok(RunOutcome { case: p.case.clone(), state, report, variables: p.named_values(&x), solver })
        }
        SolverKind::Nr => {
            if !config.tap_control.is_empty() || !config.shunt_control.is_empty() || config.frequency_control {
                return Err(Error::InvalidConfig("the nr solver handles only gen-voltage control".into()));
            }
            let nr = NrOptions {
                tol: spec.tol,
                max_inner: spec.max_iter.min(NrOptions::default().max_inner),
                enforce_q_limits: config.gen_voltage_control,
                ..NrOptions::default()
            };
            let (state, report) = if config.gen_voltage_control {
                let (s, r, _) = nr_pv_pq(case, &nr)?;
                (s, r)
            } else {
                let (s, _, mut r) = newton_raphson(case, warm, &nr)?;
                r.regulation = Some(voltage_summary(case, &s));
                (s, r)
            };
            Ok(RunOutcome { case: case.clone(), state, report, variables: Vec::new(), solver })
        }
        SolverKind::Fb => {
            let fb = FbOptions { tol: spec.tol, max_iter: spec.max_iter.max(FbOptions::default().max_iter), ..FbOptions::default() };
            let problem = assemble(case, config)?;
            let x0 = match warm {
                Some(w) => problem.initial_point(Some(w))?,
                None => {
                    // same staging as the MCP path: power flow first
                    let pa = assemble(case, &RegulationConfig::stage_a())?;
                    let (xa, ra) = fb_solve(&pa, &pa.flat_start(), &fb)?;
                    if ra.converged() && *config != RegulationConfig::stage_a() {
                        let (x, mut rep) = fb_solve(&problem, &problem.initial_point(Some(&pa.named_values(&xa)))?, &fb)?;
                        rep.regulation = Some(regulation_summary(&problem, &x));
                        let mut total = ra;
                        chain_reports(&mut total, rep);
                        let state = problem.complete_state(&x)?;
                        return Ok(RunOutcome {
                            case: problem.case.clone(),
                            state,
                            report: total,
                            variables: problem.named_values(&x),
                            solver,
                        });
                    }
                    problem.flat_start()
                }
            };
            let (x, mut report) = fb_solve(&problem, &x0, &fb)?;
            report.regulation = Some(regulation_summary(&problem, &x));
            let state = problem.complete_state(&x)?;
            Ok(RunOutcome { case: problem.case.clone(), state, report, variables: problem.named_values(&x), solver })
        }
    }
}

fn read_warm(spec: &RunSpec, case: &GridCase) -> Result<Option<Vec<(String, f64)>>> {
    match &spec.warm_start {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.clone(), source })?;
            Ok(Some(read_solution(&text)?.named_values()))
        }
        None if spec.start == StartPoint::Case => Ok(Some(stored_operating_point(case))),
        None => Ok(None),
    }
}

/// Single solve of `spec.case`.
pub fn cmd_solve(spec: &RunSpec) -> Result<RunOutcome> {
    spec.check()?;
    let (case, sidecar) = load_case(spec)?;
    let config = regulation_config(&case, spec.controls, sidecar.as_ref())?;
    let warm = read_warm(spec, &case)?;
    run_solver(&case, &config, spec.solver, warm.as_deref(), spec)
}

/// One solver's entry in a comparison row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareCell {
    pub solver: SolverKind,
    pub status: Option<SolveStatus>,
    pub iterations: Option<usize>,
    pub time_s: Option<f64>,
    pub max_v_deviation: Option<f64>,
    pub error: Option<String>,
}

impl CompareCell {
    pub fn converged(&self) -> bool {
        self.status == Some(SolveStatus::Converged)
    }

    /// `iterations time max_dev`, or `f n/a n/a` for a failed run.
    pub fn columns(&self) -> [String; 3] {
        if !self.converged() {
            return ["f".into(), "n/a".into(), "n/a".into()];
        }
        [
            self.iterations.map_or("n/a".into(), |v| v.to_string()),
            self.time_s.map_or("n/a".into(), |v| format!("{v:.2}")),
            self.max_v_deviation.map_or("n/a".into(), |v| format!("{v:.2e}")),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub case: String,
    pub cells: Vec<CompareCell>,
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// NR, MCP and FB on every case of `spec.cases` (and `spec.case` if set).
/// Failures become cells; the table is never aborted. Cases run in parallel.
pub fn cmd_compare(spec: &RunSpec) -> Result<Vec<CompareRow>> {
    spec.check()?;
    let mut cases = spec.cases.clone();
    if !spec.case.as_os_str().is_empty() {
        cases.insert(0, spec.case.clone());
    }
    let pool = thread_pool()?;
    let rows = pool.install(|| {
        cases
            .par_iter()
            .map(|path| compare_one(path, spec))
            .collect::<Vec<_>>()
    });
    Ok(rows)
}

fn compare_one(path: &Path, spec: &RunSpec) -> CompareRow {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let loaded = load_case_from(path, spec)
        .and_then(|(c, sc)| regulation_config(&c, spec.controls, sc.as_ref()).map(|cfg| (c, cfg)));
    let cells = [SolverKind::Nr, SolverKind::Mcp, SolverKind::Fb]
        .into_iter()
        .map(|solver| {
            let run = loaded.as_ref().map_err(|e| e.to_string()).and_then(|(c, cfg)| {
                run_solver(c, cfg, solver, None, spec).map_err(|e| e.to_string())
            });
            match run {
                Ok(o) => CompareCell {
                    solver,
                    status: Some(o.report.status),
                    iterations: Some(o.report.iterations),
                    time_s: Some(o.report.wall_time.as_secs_f64()),
                    max_v_deviation: Some(o.max_deviation()),
                    error: None,
                },
                Err(e) => CompareCell {
                    solver,
                    status: None,
                    iterations: None,
                    time_s: None,
                    max_v_deviation: None,
                    error: Some(e),
                },
            }
        })
        .collect();
    CompareRow { case: name, cells }
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::from("case            | NR iter time max|v-vsp|      | MCP iter time max|v-vsp|     | FB iter time max|v-vsp|\n");
    for r in rows {
        s.push_str(&format!("{:<15}", r.case));
        for c in &r.cells {
            let [a, b, d] = c.columns();
            s.push_str(&format!(" | {a:>5} {b:>7} {d:>10}"));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageRow {
    /// Generator ids removed so far, in order.
    pub removed: Vec<usize>,
    pub mw_lost: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub df_pu: f64,
    pub frequency_hz: f64,
    pub max_v_deviation: f64,
    pub time_s: f64,
}

/// Remove `spec.outages` cumulatively and solve each prefix with frequency
/// control on, warm-started from the previous solution. The first row is the
/// unperturbed case. Nonconvergent rows are kept and the sweep continues.
pub fn cmd_outage_sweep(spec: &RunSpec) -> Result<Vec<OutageRow>> {
    spec.check()?;
    let (case, sidecar) = load_case(spec)?;
    let mut controls = spec.controls;
    controls.frequency = true;
    let config = regulation_config(&case, controls, sidecar.as_ref())?;
    for id in &spec.outages {
        if case.generator_index(*id).is_none() {
            return Err(Error::InvalidConfig(format!("outage generator {id} is not an in-service generator")));
        }
    }
    let mut warm = read_warm(spec, &case)?;
    let mut rows = Vec::new();
    for k in 0..=spec.outages.len() {
        let removed = spec.outages[..k].to_vec();
        let mw_lost: f64 = removed
            .iter()
            .map(|id| case.generators[case.generator_index(*id).unwrap()].p_sp * case.base_mva)
            .fold(0.0, |a, b| a + b);
        let reduced = case.without_generators(&removed)?;
        let out = run_solver(&reduced, &config, SolverKind::Mcp, warm.as_deref(), spec)?;
        let reg = out.report.regulation.clone().unwrap_or_else(|| voltage_summary(&out.case, &out.state));
        log::info!("outage prefix {:?}: {}", removed, out.summary_line());
        rows.push(OutageRow {
            removed,
            mw_lost,
            status: out.report.status,
            iterations: out.report.iterations,
            df_pu: out.state.df,
            frequency_hz: reg.frequency_hz,
            max_v_deviation: reg.max_v_deviation,
            time_s: out.report.wall_time.as_secs_f64(),
        });
        if out.report.converged() {
            warm = Some(out.variables);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub width: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub violations: usize,
    pub max_violation: f64,
    pub devices_at_limits: usize,
    pub time_s: f64,
}

/// Devices used by the bound sweep when the sidecar names none: a switched shunt
/// at every bus outside its voltage bounds and, for each such bus, the nearest
/// transformer regulating it.
pub fn auto_devices(case: &GridCase, state: &GridState) -> (GridCase, RegulationConfig) {
    let mut case = case.clone();
    let mut config = RegulationConfig::default();
    let mut used = HashSet::new();
    let violating: Vec<usize> = (0..case.n_bus())
        .filter(|&i| {
            let b = &case.buses[i];
            state.vm[i] < b.v_min - crate::formulation::VIOLATION_TOL || state.vm[i] > b.v_max + crate::formulation::VIOLATION_TOL
        })
        .collect();
    for &i in &violating {
        config.shunt_control.push(case.buses[i].id);
        let dist = case.hop_distances(i);
        let nearest = case
            .branches
            .iter()
            .enumerate()
            .filter(|(k, b)| b.transformer && !used.contains(k))
            .min_by_key(|(_, b)| (dist[b.from].min(dist[b.to]), b.id));
        if let Some((k, _)) = nearest {
            used.insert(k);
            case.branches[k].regulated_bus = Some(i);
            config.tap_control.push(case.branches[k].id);
        }
    }
    (case, config)
}

/// Widen device ranges through `spec.widths`, each solve warm-started from
/// the previous one, and record the voltage-bound violations. Width 0 solves
/// without devices. Devices come from `--controls taps,shunts` when given,
/// otherwise from [`auto_devices`] at the width-0 solution.
pub fn cmd_bound_sweep(spec: &RunSpec) -> Result<Vec<SweepPoint>> {
    spec.check()?;
    let (case, sidecar) = load_case(spec)?;
    let mut base_controls = spec.controls;
    base_controls.taps = false;
    base_controls.shunts = false;
    let base = regulation_config(&case, base_controls, sidecar.as_ref())?;
    let warm0 = read_warm(spec, &case)?;
    let first = run_solver(&case, &base, SolverKind::Mcp, warm0.as_deref(), spec)?;

    let (dev_case, mut config) = if spec.controls.taps || spec.controls.shunts {
        (case.clone(), regulation_config(&case, spec.controls, sidecar.as_ref())?)
    } else {
        let (c, mut cfg) = auto_devices(&case, &first.state);
        cfg.gen_voltage_control = base.gen_voltage_control;
        cfg.frequency_control = base.frequency_control;
        (c, cfg)
    };

    let mut warm = first.report.converged().then(|| first.variables.clone());
    let mut points = Vec::new();
    for &w in &spec.widths {
        let out = if w == 0.0 || (config.tap_control.is_empty() && config.shunt_control.is_empty()) {
            first.clone()
        } else {
            config.device_width = Some(w);
            run_solver(&dev_case, &config, SolverKind::Mcp, warm.as_deref(), spec)?
        };
        let reg = out.report.regulation.clone().unwrap_or_else(|| voltage_summary(&out.case, &out.state));
        log::info!("width {w}: {}", out.summary_line());
        points.push(SweepPoint {
            width: w,
            status: out.report.status,
            iterations: out.report.iterations,
            violations: reg.violation_count(),
            max_violation: reg.max_violation(),
            devices_at_limits: reg.devices_at_limits,
            time_s: out.report.wall_time.as_secs_f64(),
        });
        if out.report.converged() && w > 0.0 {
            warm = Some(out.variables);
        }
    }
    Ok(points)
}

/// Serialize rows as JSON, or as CSV with one line per row.
pub fn rows_to_string<T: Serialize>(rows: &[T], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
        OutputFormat::Csv => {
            let mut out = String::new();
            for (k, r) in rows.iter().enumerate() {
                let v = serde_json::to_value(r)?;
                let obj = v.as_object().ok_or_else(|| Error::InvalidConfig("row is not a record".into()))?;
                if k == 0 {
                    out.push_str(&obj.keys().cloned().collect::<Vec<_>>().join(","));
                    out.push('\n');
                }
                let cells: Vec<String> = obj
                    .values()
                    .map(|v| match v {
                        serde_json::Value::String(s) => s.clone(),
                        serde_json::Value::Null => String::new(),
                        serde_json::Value::Array(a) => {
                            a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
                        }
                        other => other.to_string(),
                    })
                    .collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn controls_parse_and_print() {
        let c: Controls = "gen-voltage,frequency".parse().unwrap();
        assert!(c.gen_voltage && c.frequency && !c.taps);
        assert_eq!(c.to_string(), "gen-voltage,frequency");
        assert_eq!("none".parse::<Controls>().unwrap(), Controls::default());
        assert!("volts".parse::<Controls>().is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let spec = RunSpec { outages: vec![3, 1], solver: SolverKind::Fb, ..RunSpec::for_case("x.m") };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<RunSpec>(&text).unwrap(), spec);
        let partial: RunSpec = serde_json::from_str(r#"{"case": "a.m", "solver": "nr"}"#).unwrap();
        assert_eq!(partial.solver, SolverKind::Nr);
        assert_eq!(partial.widths, DEFAULT_WIDTHS.to_vec());
        assert!(serde_json::from_str::<RunSpec>(r#"{"cace": "a.m"}"#).is_err());
    }

    #[test]
    fn failed_cell_prints_f() {
        let c = CompareCell { solver: SolverKind::Nr, status: Some(SolveStatus::Diverged), iterations: Some(9), time_s: None, max_v_deviation: None, error: None };
        assert_eq!(c.columns(), ["f".to_string(), "n/a".into(), "n/a".into()]);
    }
}
