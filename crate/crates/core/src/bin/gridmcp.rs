use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridmcp::driver::{
    cmd_bound_sweep, cmd_compare, cmd_outage_sweep, cmd_solve, compare_table, rows_to_string, Controls, Exit, RunSpec,
    SolverKind, StartPoint,
};
use gridmcp::matpower::{write_solution, OutputFormat};
use gridmcp::{Error, Result};

#[derive(Parser)]
#[command(name = "gridmcp", version, about = "Power flow with voltage and frequency regulation as a complementarity problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one case and write the solution.
    Solve(Flags),
    /// Run NR, MCP and FB on each case and print the comparison table.
    Compare {
        #[command(flatten)]
        flags: Flags,
        /// More case files.
        extra: Vec<PathBuf>,
    },
    /// Remove the --outages generators one by one and report the frequency.
    OutageSweep(Flags),
    /// Widen tap and shunt ranges through --widths and count voltage violations.
    BoundSweep(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON file with any of the options below; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<PathBuf>,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Comma list of gen-voltage, taps, shunts, frequency (or none).
    #[arg(long)]
    controls: Option<String>,
    /// mcp, nr or fb.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Solution file of an earlier run.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// flat (staged solve) or case (stored operating point); ignored with --warm-start.
    #[arg(long)]
    start: Option<String>,
    /// Generator ids, removed in this order.
    #[arg(long, value_delimiter = ',')]
    outages: Option<Vec<usize>>,
    /// Fractional device widths, e.g. 0,0.02,0.04.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<f64>>,
    /// Multiplier on every droop gain.
    #[arg(long)]
    droop_scale: Option<f64>,
    /// json or csv.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

impl Flags {
    fn spec(self) -> Result<RunSpec> {
        let mut s = match &self.config {
            Some(p) => RunSpec::read_config(p)?,
            None => RunSpec::default(),
        };
        if let Some(v) = self.case {
            s.case = v;
        }
        if let Some(v) = self.sidecar {
            s.sidecar = Some(v);
        }
        if let Some(v) = self.controls {
            s.controls = v.parse::<Controls>()?;
        }
        if let Some(v) = self.solver {
            s.solver = v.parse::<SolverKind>()?;
        }
        if let Some(v) = self.tol {
            s.tol = v;
        }
        if let Some(v) = self.max_iter {
            s.max_iter = v;
        }
        if let Some(v) = self.warm_start {
            s.warm_start = Some(v);
        }
        if let Some(v) = self.start {
            s.start = v.parse::<StartPoint>()?;
        }
        if let Some(v) = self.outages {
            s.outages = v;
        }
        if let Some(v) = self.widths {
            s.widths = v;
        }
        if let Some(v) = self.droop_scale {
            s.droop_scale = v;
        }
        if let Some(v) = self.format {
            s.format = v.parse::<OutputFormat>()?;
        }
        if let Some(v) = self.out {
            s.out = Some(v);
        }
        s.verbose |= self.verbose;
        Ok(s)
    }
}

fn emit(spec: &RunSpec, text: &str) -> Result<()> {
    match &spec.out {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io { path: p.clone(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<Exit> {
    match cli.command {
        Command::Solve(flags) => {
            let spec = flags.spec()?;
            let out = cmd_solve(&spec)?;
            eprintln!("{}", out.summary_line());
            if !out.report.converged() && !out.report.message.is_empty() {
                eprintln!("{}", out.report.message);
            }
            emit(&spec, &write_solution(&out.solution_file(), spec.format)?)?;
            Ok(Exit::from_status(out.report.status))
        }
        Command::Compare { flags, extra } => {
            let mut spec = flags.spec()?;
            spec.cases.extend(extra);
            let rows = cmd_compare(&spec)?;
            eprint!("{}", compare_table(&rows));
            emit(&spec, &rows_to_string(&rows, spec.format)?)?;
            Ok(Exit::Converged)
        }
        Command::OutageSweep(flags) => {
            let spec = flags.spec()?;
            let rows = cmd_outage_sweep(&spec)?;
            for r in &rows {
                eprintln!("{:>10.1} MW  {:.2} Hz  max|v-vsp| {:.2e}  {:?}", r.mw_lost, r.frequency_hz, r.max_v_deviation, r.status);
            }
            emit(&spec, &rows_to_string(&rows, spec.format)?)?;
            let all = rows.iter().all(|r| r.status == gridmcp::newton::SolveStatus::Converged);
            Ok(if all { Exit::Converged } else { Exit::NotConverged })
        }
        Command::BoundSweep(flags) => {
            let spec = flags.spec()?;
            let rows = cmd_bound_sweep(&spec)?;
            for r in &rows {
                eprintln!("width {:.3}  violations {:>4}  max {:.2e}  {:?}", r.width, r.violations, r.max_violation, r.status);
            }
            emit(&spec, &rows_to_string(&rows, spec.format)?)?;
            let all = rows.iter().all(|r| r.status == gridmcp::newton::SolveStatus::Converged);
            Ok(if all { Exit::Converged } else { Exit::NotConverged })
        }
    }
}

fn main() -> ExitCode {
    // usage errors are input errors (1); 2 is reserved for nonconvergence
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Exit::InputError.code() } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let verbose = match &cli.command {
        Command::Solve(f) | Command::OutageSweep(f) | Command::BoundSweep(f) => f.verbose,
        Command::Compare { flags, .. } => flags.verbose,
    };
    env_logger::Builder::new()
        .filter_level(if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_env("GRIDMCP_LOG")
        .format_timestamp(None)
        .init();
    let exit = match run(cli) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            Exit::InputError
        }
    };
    ExitCode::from(exit.code() as u8)
}
