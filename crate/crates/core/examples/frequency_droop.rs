//! Cumulative generator outages with droop response: each row removes one
//! more unit and reports the settled frequency.

use gridmcp::driver::{cmd_outage_sweep, RunSpec};

fn main() -> gridmcp::Result<()> {
    let spec = RunSpec {
        outages: vec![29, 5, 37],
        ..RunSpec::for_case(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/case118.m"))
    };
    for row in cmd_outage_sweep(&spec)? {
        println!(
            "lost {:7.1} MW  {:?}  {:.4} Hz  iterations {}",
            row.mw_lost, row.status, row.frequency_hz, row.iterations
        );
    }
    Ok(())
}
