//! Josephy-Newton on a small nonlinear MCP, followed by the strong-regularity
//! check at the solution.

use gridmcp::mcp::{
    classify_indices, natural_residual, norm_inf, strong_regularity_certificate, Bounds, CertificateOptions, FnMcp,
    DEFAULT_ACTIVITY_TOL,
};
use gridmcp::newton::{solve, SolverOptions};
use gridmcp::sparse::CsrMatrix;

fn main() -> gridmcp::Result<()> {
    // F(x) = (x0 + x0^3 - 1 + x1, 2 x1 - x0 + 3, x2 - 5), x0 free, x1 >= 0, x2 in [0, 2]
    let f = |x: &[f64]| vec![x[0] + x[0].powi(3) - 1.0 + x[1], 2.0 * x[1] - x[0] + 3.0, x[2] - 5.0];
    let jac = |x: &[f64]| {
        CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0 + 3.0 * x[0] * x[0]), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 2.0), (2, 2, 1.0)])
    };
    let bounds = Bounds::new(vec![f64::NEG_INFINITY, 0.0, 0.0], vec![f64::INFINITY, f64::INFINITY, 2.0])?;
    let problem = FnMcp::new(bounds, f, jac);

    let (x, report) = solve(&problem, &[0.0; 3], &SolverOptions::default())?;
    println!("status {:?} after {} iterations", report.status, report.iterations);
    for (k, r) in report.residual_history.iter().enumerate() {
        println!("  {k}: {r:.3e}");
    }
    println!("x = {x:.6?}, residual {:.2e}", norm_inf(&natural_residual(&problem, &x)?));

    let part = classify_indices(&problem, &x, DEFAULT_ACTIVITY_TOL)?;
    let cert = strong_regularity_certificate(&problem, &x, &part, &CertificateOptions::default())?;
    println!("certificate: {:?} ({})", cert.verdict, cert.note);
    Ok(())
}
