//! Fischer-Burmeister semismooth Newton on the same power flow MCP that the
//! Josephy-Newton solver handles.

use gridmcp::baselines::{fb_solve, FbOptions};
use gridmcp::formulation::{assemble, RegulationConfig};
use gridmcp::matpower::read_case;
use gridmcp::newton::{solve, SolverOptions};

fn main() -> gridmcp::Result<()> {
    let case = read_case(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/case118.m"))?;
    let problem = assemble(&case, &RegulationConfig::stage_b())?;
    let x0 = problem.flat_start();

    let (_, fb) = fb_solve(&problem, &x0, &FbOptions::default())?;
    println!("fb:  {:?} in {} iterations, {:?}", fb.status, fb.iterations, fb.wall_time);
    let (_, jn) = solve(&problem, &x0, &SolverOptions::default())?;
    println!("mcp: {:?} in {} iterations, {:?}", jn.status, jn.iterations, jn.wall_time);
    Ok(())
}
