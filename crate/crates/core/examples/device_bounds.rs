//! Tap and shunt regulation with shrinking device ranges: voltage violations
//! and devices at their limits per range width.

use gridmcp::driver::{cmd_bound_sweep, RunSpec};

fn main() -> gridmcp::Result<()> {
    let spec = RunSpec {
        widths: vec![0.0, 0.02, 0.05, 0.1],
        ..RunSpec::for_case(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/case300.m"))
    };
    for p in cmd_bound_sweep(&spec)? {
        println!(
            "width {:.2}: {:?}, {} violations (max {:.3}), {} devices at limits",
            p.width, p.status, p.violations, p.max_violation, p.devices_at_limits
        );
    }
    Ok(())
}
