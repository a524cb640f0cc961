//! Recursive P-matrix test against sampled principal minors.

use gridmcp::pmatrix::{is_p_matrix, sample_principal_minors};
use nalgebra::{dmatrix, DMatrix};

fn main() {
    let cases: Vec<(&str, DMatrix<f64>)> = vec![
        ("skew + identity", dmatrix![1.0, 2.0, -1.0; -2.0, 1.0, 3.0; 1.0, -3.0, 1.0]),
        ("not P (negative 2x2 minor)", dmatrix![1.0, 2.0; 3.0, 1.0]),
        ("P but not PD", dmatrix![1.0, -3.0; 0.0, 1.0]),
    ];
    for (name, a) in cases {
        let c = is_p_matrix(&a, 1e-12);
        let (smallest, seen) = sample_principal_minors(&a, 100, 7);
        println!("{name}: is_p {} min pivot {:.3} ({} blocks); sampled min minor {smallest:.3} over {seen}", c.is_p, c.min_pivot, c.visited);
    }
}
