pub mod baselines;
pub mod blcp;
pub mod driver;
pub mod error;
pub mod formulation;
pub mod grid;
pub mod matpower;
pub mod mcp;
pub mod newton;
pub mod pmatrix;
pub mod sparse;

pub use error::{Error, Result};
