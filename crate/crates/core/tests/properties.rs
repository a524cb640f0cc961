mod common;

use gridmcp::baselines::fischer_burmeister;
use gridmcp::blcp::{brute_force_blcp, solve_blcp, Activity, BlcpOptions, BlcpStatus, PivotMethod};
use gridmcp::newton::estimate_q_order;
use gridmcp::pmatrix::{is_p_matrix, sample_principal_minors};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_p_lcp, random_p_matrix};

fn all_minors_positive(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (1u32..(1 << n)).all(|mask| {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])]).determinant() > 1e-12
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn blcp_methods_agree_with_enumeration(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lcp = random_p_lcp(&mut rng, n);
        let star = brute_force_blcp(&lcp).unwrap();
        prop_assert_eq!(star.len(), 1);
        for method in [PivotMethod::Auto, PivotMethod::BlockOnly, PivotMethod::LemkeOnly] {
            let s = solve_blcp(&lcp, None, &BlcpOptions { method, ..BlcpOptions::default() });
            if method == PivotMethod::BlockOnly && s.status != BlcpStatus::Solved {
                // block pivoting alone may cycle on P-matrices
                continue;
            }
            prop_assert_eq!(s.status, BlcpStatus::Solved, "{:?}", method);
            let d = s.x.iter().zip(&star[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(d < 1e-9, "{:?}: {}", method, d);
            prop_assert!(lcp.complementarity_error(&s.x) < 1e-9);
        }
    }

    #[test]
    fn optimal_assignment_is_a_zero_pivot_warm_start(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lcp = random_p_lcp(&mut rng, n);
        let first = solve_blcp(&lcp, None, &BlcpOptions::default());
        prop_assert_eq!(first.status, BlcpStatus::Solved);
        let again = solve_blcp(&lcp, Some(&first.state.assignment), &BlcpOptions::default());
        prop_assert_eq!(again.state.pivots, 0);
        prop_assert_eq!(again.status, BlcpStatus::Solved);
    }

    #[test]
    fn recursive_p_test_matches_minors(seed in any::<u64>(), n in 1usize..7, shift in -1.5f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_p_matrix(&mut rng, n) - DMatrix::identity(n, n) * shift;
        let fast = is_p_matrix(&a, 1e-12);
        prop_assert_eq!(fast.is_p, all_minors_positive(&a));
        if fast.is_p {
            prop_assert!(sample_principal_minors(&a, 50, seed).0 > 0.0);
        }
    }

    #[test]
    fn fischer_burmeister_vanishes_exactly_on_complementary_pairs(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let phi = fischer_burmeister(a, b);
        prop_assert!(phi.abs() > 0.0 || (a >= 0.0 && b >= 0.0 && a * b == 0.0));
        prop_assert!(fischer_burmeister(a.abs(), 0.0).abs() < 1e-15);
        prop_assert!(fischer_burmeister(0.0, b.abs()).abs() < 1e-15);
    }

    #[test]
    fn q_order_recovers_the_exponent(p in 1.5f64..3.0, r0 in 0.05f64..0.5) {
        let mut h = vec![r0];
        while *h.last().unwrap() > 1e-12 {
            let r = *h.last().unwrap();
            h.push(r.powf(p));
        }
        if let Some(q) = estimate_q_order(&h) {
            prop_assert!((q - p).abs() < 1e-6, "{} vs {}", q, p);
        }
    }
}

#[test]
fn fixed_indices_stay_at_their_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let lcp = random_p_lcp(&mut rng, 5);
        let s = solve_blcp(&lcp, None, &BlcpOptions::default());
        assert_eq!(s.status, BlcpStatus::Solved);
        for i in 0..5 {
            let (l, u) = (lcp.bounds.lower()[i], lcp.bounds.upper()[i]);
            if l == u {
                assert_eq!(s.x[i], l);
                assert_ne!(s.state.assignment[i], Activity::Basic);
            }
        }
    }
}
