//! Parse a MATPOWER case, list what was read, and write it back out.
//!
//! `cargo run --example read_case -- data/case14.m`

use gridmcp::grid::BusType;
use gridmcp::matpower::{read_case, write_case};

fn main() -> gridmcp::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/case14.m").into());
    let case = read_case(&path)?;
    let count = |k| case.buses.iter().filter(|b| b.kind == k).count();
    println!("{}: {} buses ({} PQ, {} PV, {} slack)", case.name, case.n_bus(), count(BusType::PQ), count(BusType::PV), count(BusType::Slack));
    println!("{} generators, {} branches, base {} MVA", case.generators.len(), case.branches.len(), case.base_mva);
    for d in &case.diagnostics {
        println!("  {:?}: {}", d.severity, d.message);
    }
    let text = write_case(&case);
    println!("rewritten file has {} lines", text.lines().count());
    Ok(())
}
