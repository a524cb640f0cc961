#![allow(dead_code)]

use std::path::PathBuf;

use gridmcp::blcp::BoxedLcp;
use gridmcp::grid::GridCase;
use gridmcp::matpower::parse_case;
use gridmcp::mcp::{Bounds, FnMcp, McpProblem};
use gridmcp::sparse::CsrMatrix;
use nalgebra::DMatrix;
use rand::Rng;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

/// Positive definite (not symmetric) matrix, hence a P-matrix.
pub fn random_p_matrix(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let c = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    b.transpose() * &b + DMatrix::identity(n, n) * 0.1 + (&c - c.transpose())
}

/// Mixed bounds: free, one-sided, boxed and the occasional fixed index.
pub fn random_bounds(rng: &mut impl Rng, n: usize) -> Bounds {
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for i in 0..n {
        let a = rng.gen_range(-2.0..0.5);
        let w = rng.gen_range(0.1..3.0);
        (lo[i], hi[i]) = match rng.gen_range(0..10) {
            0 | 1 => (f64::NEG_INFINITY, f64::INFINITY),
            2 | 3 => (a, f64::INFINITY),
            4 => (f64::NEG_INFINITY, a + w),
            5 => (a, a),
            _ => (a, a + w),
        };
    }
    Bounds::new(lo, hi).unwrap()
}

pub fn random_p_lcp(rng: &mut impl Rng, n: usize) -> BoxedLcp {
    let m = random_p_matrix(rng, n);
    let q = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    BoxedLcp::new(CsrMatrix::from_dense(&m), q, random_bounds(rng, n)).unwrap()
}

/// `F(x) = Mx + q + c·x³` with `c ≥ 0` componentwise.
pub fn cubic_mcp(rng: &mut impl Rng, n: usize) -> impl McpProblem {
    let m = random_p_matrix(rng, n);
    let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let bounds = random_bounds(rng, n);
    let (m2, c2) = (m.clone(), c.clone());
    FnMcp::new(
        bounds,
        move |x: &[f64]| (0..n).map(|i| (0..n).map(|j| m[(i, j)] * x[j]).sum::<f64>() + q[i] + c[i] * x[i].powi(3)).collect(),
        move |x: &[f64]| {
            let mut j = m2.clone();
            for i in 0..n {
                j[(i, i)] += 3.0 * c2[i] * x[i] * x[i];
            }
            CsrMatrix::from_dense(&j)
        },
    )
}

/// Three buses on lossless lines: slack generator at bus 1, loads at 2 and 3.
/// `step_mw` is added to the bus-3 load; the generator's set point covers the
/// unstepped load exactly.
pub fn three_bus(step_mw: f64) -> GridCase {
    let text = format!(
        "function mpc = three_bus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
\t2\t1\t40\t10\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
\t3\t1\t{}\t15\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t100\t0\t300\t-300\t1.02\t100\t1\t500\t0;
];
mpc.branch = [
\t1\t2\t0\t0.05\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t2\t3\t0\t0.04\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t1\t3\t0\t0.08\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
];
",
        60.0 + step_mw
    );
    parse_case(&text).unwrap()
}
