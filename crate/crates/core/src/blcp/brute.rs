use nalgebra::{DMatrix, DVector};

use super::{Activity, BoxedLcp};
use crate::error::{Error, Result};
use crate::mcp::norm_inf;

pub const BRUTE_FORCE_MAX_DIM: usize = 12;

/// Every solution found by enumerating all `3ⁿ` activity patterns.
///
/// Each pattern fixes the nonbasic indices at their bound and solves the
/// basic subsystem densely; patterns with a singular subsystem are skipped.
/// Solutions closer than `1e-8` are merged.
pub fn brute_force_blcp(lcp: &BoxedLcp) -> Result<Vec<Vec<f64>>> {
    let n = lcp.dim();
    if n > BRUTE_FORCE_MAX_DIM {
        return Err(Error::TooLarge { what: "brute-force enumeration", n, max: BRUTE_FORCE_MAX_DIM });
    }
    let m = lcp.m.to_dense();
    let (l, u) = (lcp.bounds.lower(), lcp.bounds.upper());
    let scale = 1.0 + norm_inf(&lcp.q) + m.amax();
    let tol = 1e-9 * scale;
    let mut found: Vec<Vec<f64>> = Vec::new();

    let mut pattern = vec![Activity::AtLower; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut valid = true;
        for p in pattern.iter_mut().enumerate() {
            let (i, a) = p;
            *a = match c % 3 {
                0 => Activity::Basic,
                1 => Activity::AtLower,
                _ => Activity::AtUpper,
            };
            c /= 3;
            valid &= match *a {
                Activity::AtLower => l[i].is_finite(),
                Activity::AtUpper => u[i].is_finite() && u[i] != l[i],
                Activity::Basic => true,
            };
        }
        if !valid {
            continue;
        }

        let basic: Vec<usize> = (0..n).filter(|&i| pattern[i] == Activity::Basic).collect();
        let mut x = vec![0.0; n];
        for i in 0..n {
            match pattern[i] {
                Activity::AtLower => x[i] = l[i],
                Activity::AtUpper => x[i] = u[i],
                Activity::Basic => {}
            }
        }
        if !basic.is_empty() {
            let k = basic.len();
            let a = DMatrix::from_fn(k, k, |r, s| m[(basic[r], basic[s])]);
            let rhs = DVector::from_fn(k, |r, _| {
                let i = basic[r];
                -lcp.q[i] - (0..n).filter(|&j| pattern[j] != Activity::Basic).map(|j| m[(i, j)] * x[j]).sum::<f64>()
            });
            let Some(sol) = a.lu().solve(&rhs) else { continue };
            if sol.iter().any(|v| !v.is_finite()) {
                continue;
            }
            for (r, &i) in basic.iter().enumerate() {
                x[i] = sol[r];
            }
        }

        let w = lcp.affine(&x);
        let ok = (0..n).all(|i| match pattern[i] {
            Activity::Basic => x[i] >= l[i] - tol && x[i] <= u[i] + tol && w[i].abs() <= tol,
            Activity::AtLower => l[i] == u[i] || w[i] >= -tol,
            Activity::AtUpper => w[i] <= tol,
        });
        if ok {
            let x = lcp.bounds.project(&x);
            if !found.iter().any(|f| f.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-8 * scale)) {
                found.push(x);
            }
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcp::Bounds;
    use crate::sparse::CsrMatrix;

    #[test]
    fn trivial_one_dimensional_cases() {
        let l = BoxedLcp::new(CsrMatrix::identity(1), vec![-1.0], Bounds::nonnegative(1)).unwrap();
        assert_eq!(brute_force_blcp(&l).unwrap(), vec![vec![1.0]]);
        let l = BoxedLcp::new(CsrMatrix::identity(1), vec![1.0], Bounds::nonnegative(1)).unwrap();
        assert_eq!(brute_force_blcp(&l).unwrap(), vec![vec![0.0]]);
    }

    #[test]
    fn skew_matrix_has_origin_solution() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, -1.0), (1, 0, 1.0)]);
        let l = BoxedLcp::new(m, vec![0.0, 0.0], Bounds::nonnegative(2)).unwrap();
        let sols = brute_force_blcp(&l).unwrap();
        assert!(sols.iter().any(|s| s.iter().all(|v| v.abs() < 1e-12)), "{sols:?}");
    }

    #[test]
    fn refuses_large_problems() {
        let n = BRUTE_FORCE_MAX_DIM + 1;
        let l = BoxedLcp::new(CsrMatrix::identity(n), vec![0.0; n], Bounds::nonnegative(n)).unwrap();
        assert!(matches!(brute_force_blcp(&l), Err(Error::TooLarge { .. })));
    }
}
