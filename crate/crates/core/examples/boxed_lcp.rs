//! One boxed LCP solved three ways: block pivoting, Lemke, and enumeration.

use gridmcp::blcp::{brute_force_blcp, solve_blcp, BlcpOptions, BoxedLcp, PivotMethod};
use gridmcp::mcp::Bounds;
use gridmcp::sparse::CsrMatrix;
use nalgebra::dmatrix;

fn main() -> gridmcp::Result<()> {
    let m = dmatrix![4.0, -1.0, 0.5, 0.0;
                     1.0, 3.0, -1.0, 0.2;
                     0.0, 1.0, 2.0, -0.5;
                     -0.3, 0.0, 0.5, 1.5];
    let bounds = Bounds::new(vec![0.0, -1.0, f64::NEG_INFINITY, 0.0], vec![1.0, 1.0, f64::INFINITY, f64::INFINITY])?;
    let lcp = BoxedLcp::new(CsrMatrix::from_dense(&m), vec![-6.0, 2.0, -1.0, 1.0], bounds)?;

    for method in [PivotMethod::BlockOnly, PivotMethod::LemkeOnly] {
        let s = solve_blcp(&lcp, None, &BlcpOptions { method, ..BlcpOptions::default() });
        println!(
            "{method:?}: {:?} x = {:.6?} pivots {} (block {}, single {}, lemke {})",
            s.status, s.x, s.state.pivots, s.state.block_pivots, s.state.single_pivots, s.state.lemke_pivots
        );
        println!("  assignment {:?}", s.state.assignment);
    }
    println!("enumeration: {:.6?}", brute_force_blcp(&lcp)?);
    Ok(())
}
