//! Compressed sparse row storage and a thin LU wrapper.
//!
//! The solvers build every Jacobian as triplets, compress once, and hand the
//! result to the sparse LU in `faer` for the actual factorization.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-compressed real matrix. Duplicate triplets are summed; explicit zeros
/// are kept so the sparsity pattern stays fixed across evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|e| e.0);
            for &(c, v) in &scratch {
                if indices.len() > indptr[r] && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows, ncols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[a..b].binary_search(&j) {
            Ok(k) => self.values[a + k],
            Err(_) => 0.0,
        }
    }

    /// Structural pattern as sorted `(row, col)` pairs.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        (0..self.nrows).flat_map(|i| self.row(i).map(move |(j, _)| (i, j))).collect()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Extract the block `rows × cols` (positions in the given order).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_pos = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_pos[c] = k;
        }
        let mut t = Vec::new();
        for (r, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                if col_pos[j] != usize::MAX {
                    t.push((r, col_pos[j], v));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), cols.len(), &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `self + shift * I` (square matrices only).
    pub fn add_diagonal(&self, shift: f64) -> CsrMatrix {
        assert_eq!(self.nrows, self.ncols);
        let mut t = self.triplets();
        t.extend((0..self.nrows).map(|i| (i, i, shift)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn norm_one(&self) -> f64 {
        let mut col = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                col[j] += v.abs();
            }
        }
        col.into_iter().fold(0.0, f64::max)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| Error::Singular(format!("matrix assembly failed: {e:?}")))
    }
}

static SEQUENTIAL: Once = Once::new();

/// Sparse LU factorization with partial pivoting.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

impl SparseLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        // Solves are single-threaded; batch drivers parallelize across problems instead.
        SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        if a.nrows != a.ncols {
            return Err(Error::DimensionMismatch { expected: a.nrows, got: a.ncols });
        }
        let lu = a
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::Singular(format!("LU failed: {e:?}")))?;
        Ok(SparseLu { n: a.nrows, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b` in place. Fails when the result is not finite, which is
    /// how a numerically singular factor shows up.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n);
        let mut rhs = faer::MatMut::from_column_major_slice_mut(b, self.n, 1);
        self.lu.solve_in_place(rhs.as_mut());
        check_finite(b)
    }

    pub fn solve_transpose_in_place(&self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n);
        let mut rhs = faer::MatMut::from_column_major_slice_mut(b, self.n, 1);
        self.lu.solve_transpose_in_place(rhs.as_mut());
        check_finite(b)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::Singular(format!("non-finite solve result at {index}"))),
        None => Ok(()),
    }
}

/// Hager–Higham estimate of `‖A‖₁ ‖A⁻¹‖₁` using an existing factorization.
pub fn condest_one_norm(a: &CsrMatrix, lu: &SparseLu) -> Result<f64> {
    let n = a.nrows();
    if n == 0 {
        return Ok(1.0);
    }
    let mut x = vec![1.0 / n as f64; n];
    let mut est = 0.0;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let mut y = x.clone();
        lu.solve_in_place(&mut y)?;
        let y_norm: f64 = y.iter().map(|v| v.abs()).sum();
        if y_norm <= est {
            break;
        }
        est = y_norm;
        let mut z: Vec<f64> = y.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
        lu.solve_transpose_in_place(&mut z)?;
        let (j, zmax) = z
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
        if zmax <= zx || j == last_j {
            break;
        }
        last_j = j;
        x.iter_mut().for_each(|v| *v = 0.0);
        x[j] = 1.0;
    }
    // Higham's alternating-sign probe guards against the estimate stalling low.
    let mut alt: Vec<f64> = (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + i as f64 / (n.max(2) - 1) as f64)
        })
        .collect();
    lu.solve_in_place(&mut alt)?;
    let alt_est = 2.0 * alt.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
    Ok(a.norm_one() * est.max(alt_est))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_zeros_kept() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 0.0)]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.pattern(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn lu_solves_small_system() {
        let m = CsrMatrix::from_triplets(3, 3, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0)]);
        let lu = SparseLu::factor(&m).unwrap();
        let x = lu.solve(&[1.0, 2.0, 4.0]).unwrap();
        let r = m.mul_vec(&x);
        for (a, b) in r.iter().zip([1.0, 2.0, 4.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let mut y = vec![1.0, 2.0, 4.0];
        lu.solve_transpose_in_place(&mut y).unwrap();
        let r = m.transpose().mul_vec(&y);
        assert!((r[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let res = SparseLu::factor(&m).and_then(|lu| lu.solve(&[1.0, 2.0]));
        assert!(res.is_err());
    }

    #[test]
    fn condition_estimate_matches_diagonal() {
        let m = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1e-3), (2, 2, 10.0)]);
        let lu = SparseLu::factor(&m).unwrap();
        let c = condest_one_norm(&m, &lu).unwrap();
        assert!((c - 1e4).abs() / 1e4 < 1e-12, "{c}");
    }

    #[test]
    fn submatrix_keeps_order() {
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let m = CsrMatrix::from_dense(&d);
        let s = m.submatrix(&[2, 0], &[1, 2]);
        assert_eq!(s.to_dense(), DMatrix::from_row_slice(2, 2, &[8.0, 9.0, 2.0, 3.0]));
    }
}
