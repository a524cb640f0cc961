//! Generator voltage control with reactive limits: the MCP formulation next to
//! Newton-Raphson with PV-PQ switching.

use gridmcp::baselines::{nr_pv_pq, NrOptions};
use gridmcp::driver::{cmd_solve, RunSpec};

fn main() -> gridmcp::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "case300".into());
    let path = format!("{}/../../data/{name}.m", env!("CARGO_MANIFEST_DIR"));

    let mcp = cmd_solve(&RunSpec { controls: "gen-voltage".parse()?, ..RunSpec::for_case(&path) })?;
    println!("mcp: {}", mcp.summary_line());

    let (_, report, log) = nr_pv_pq(&mcp.case, &NrOptions::default())?;
    println!(
        "nr:  {:?} after {} iterations, {} switches over {} rounds, cycling {}",
        report.status,
        report.iterations,
        log.events.len(),
        log.rounds,
        log.cycling
    );
    Ok(())
}
