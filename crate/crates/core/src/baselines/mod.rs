//! Reference solvers the MCP formulation is checked against.

mod fb;
mod nr;

pub use fb::{fb_residual, fb_solve, fischer_burmeister, FbOptions};
pub use nr::{newton_raphson, nr_pv_pq, BusMode, NrOptions, SwitchEvent, SwitchLog};
