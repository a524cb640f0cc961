mod common;

use approx::assert_abs_diff_eq;
use gridmcp::baselines::{newton_raphson, NrOptions};
use gridmcp::formulation::{assemble, RegulationConfig};
use gridmcp::matpower::{parse_case, read_case, write_case};
use gridmcp::newton::{solve, SolveStatus, SolverOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{cubic_mcp, data};

#[test]
fn write_is_idempotent_after_one_pass() {
    for name in ["case9.m", "case14.m", "case118.m", "case300.m", "case1354pegase.m", "case3120sp.m"] {
        let case = read_case(data(name)).unwrap();
        let once = write_case(&case);
        let back = parse_case(&once).unwrap();
        assert_eq!(back.n_bus(), case.n_bus(), "{name}");
        assert_eq!(back.generators.len(), case.generators.len(), "{name}");
        assert_eq!(write_case(&back), once, "{name}");
    }
}

#[test]
fn plain_power_flow_has_two_rows_per_pq_and_one_per_pv() {
    for name in ["case9.m", "case118.m"] {
        let case = read_case(data(name)).unwrap();
        let p = assemble(&case, &RegulationConfig::stage_a()).unwrap();
        let fixed_v = case.buses.iter().filter(|b| b.kind != gridmcp::grid::BusType::PQ).count();
        assert_eq!(p.layout.len(), 2 * case.n_bus() - fixed_v - 1, "{name}");
    }
}

#[test]
fn mcp_without_limits_matches_newton_raphson() {
    for name in ["case9.m", "case14.m", "case118.m"] {
        let case = read_case(data(name)).unwrap();
        let p = assemble(&case, &RegulationConfig::stage_a()).unwrap();
        let (x, r) = solve(&p, &p.flat_start(), &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged, "{name}");
        let mcp = p.complete_state(&x).unwrap();
        let opts = NrOptions { enforce_q_limits: false, ..NrOptions::default() };
        let (nr, _, rep) = newton_raphson(&case, None, &opts).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged, "{name}");
        for i in 0..case.n_bus() {
            assert_abs_diff_eq!(mcp.vm[i], nr.vm[i], epsilon = 1e-7);
            assert_abs_diff_eq!(mcp.va[i], nr.va[i], epsilon = 1e-7);
        }
    }
}

#[test]
fn cubic_problems_converge_superlinearly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = cubic_mcp(&mut rng, 8);
        let (_, r) = solve(&p, &[0.0; 8], &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        if let Some(q) = r.q_order {
            assert!(q > 1.5, "q = {q}");
        }
    }
}
