use nalgebra::Complex;

use super::{GridCase, GridState};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

type C = Complex<f64>;

/// π-model entries of one branch and their derivative with respect to the
/// tap ratio. Order: `ff, ft, tf, tt`.
#[derive(Debug, Clone)]
pub struct BranchAdmittance {
    pub pos: [usize; 4],
    pub y: [C; 4],
    pub dy_du: [C; 4],
}

/// Nodal admittance `Y = G + jB` on a fixed pattern (diagonal plus branch
/// incidences). Switched-shunt susceptances sit on the diagonal of `B`, so
/// `∂B_ii/∂b = 1` for the shunt at bus `i`.
#[derive(Debug, Clone)]
pub struct AdmittanceModel {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    pub diag: Vec<usize>,
    pub branches: Vec<BranchAdmittance>,
}

impl AdmittanceModel {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.col_idx[p], self.g[p], self.b[p]))
    }

    fn position(&self, i: usize, j: usize) -> usize {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        self.row_ptr[i] + cols.binary_search(&j).expect("entry in pattern")
    }

    pub fn g_matrix(&self) -> CsrMatrix {
        self.to_csr(&self.g)
    }

    pub fn b_matrix(&self) -> CsrMatrix {
        self.to_csr(&self.b)
    }

    fn to_csr(&self, vals: &[f64]) -> CsrMatrix {
        let n = self.n();
        let t: Vec<_> = (0..n)
            .flat_map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (i, self.col_idx[p], vals[p])))
            .collect();
        CsrMatrix::from_triplets(n, n, &t)
    }
}

/// π-model of a branch with series admittance `ys`, total charging `bc`,
/// from-side ratio `u` and shift `θ`:
/// `Yff = (ys + j bc/2)/u²`, `Yft = −ys/(u e^{−jθ})`, `Ytf = −ys/(u e^{jθ})`,
/// `Ytt = ys + j bc/2`.
fn pi_model(r: f64, x: f64, bc: f64, u: f64, shift: f64) -> ([C; 4], [C; 4]) {
    let ys = C::new(1.0, 0.0) / C::new(r, x);
    let half = C::new(0.0, bc / 2.0);
    let e_plus = C::from_polar(1.0, shift);
    let e_minus = e_plus.conj();
    let y = [(ys + half) / (u * u), -ys / (e_minus * u), -ys / (e_plus * u), ys + half];
    let dy = [
        -(ys + half) * (2.0 / (u * u * u)),
        ys / (e_minus * (u * u)),
        ys / (e_plus * (u * u)),
        C::new(0.0, 0.0),
    ];
    (y, dy)
}

pub fn build_admittance(case: &GridCase, state: &GridState) -> Result<AdmittanceModel> {
    state.check(case)?;
    let n = case.n_bus();
    let mut cols: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for br in &case.branches {
        cols[br.from].push(br.to);
        cols[br.to].push(br.from);
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    for c in cols.iter_mut() {
        c.sort_unstable();
        c.dedup();
        col_idx.extend_from_slice(c);
        row_ptr.push(col_idx.len());
    }
    let nnz = col_idx.len();
    let mut model = AdmittanceModel {
        row_ptr,
        col_idx,
        g: vec![0.0; nnz],
        b: vec![0.0; nnz],
        diag: Vec::with_capacity(n),
        branches: Vec::with_capacity(case.branches.len()),
    };
    model.diag = (0..n).map(|i| model.position(i, i)).collect();

    for (i, bus) in case.buses.iter().enumerate() {
        model.g[model.diag[i]] += bus.gs;
        model.b[model.diag[i]] += bus.bs;
    }
    for (s, sh) in case.shunts.iter().enumerate() {
        model.b[model.diag[sh.bus]] += state.shunt_b[s];
    }
    for (k, br) in case.branches.iter().enumerate() {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::InvalidCase(format!("branch {} has zero impedance", br.id)));
        }
        let u = state.tap[k];
        if !(u > 0.0) || !u.is_finite() {
            return Err(Error::InvalidCase(format!("branch {} tap ratio {u} not positive", br.id)));
        }
        let (y, dy) = pi_model(br.r, br.x, br.b, u, br.shift);
        let pos = [
            model.diag[br.from],
            model.position(br.from, br.to),
            model.position(br.to, br.from),
            model.diag[br.to],
        ];
        for (p, v) in pos.iter().zip(&y) {
            model.g[*p] += v.re;
            model.b[*p] += v.im;
        }
        model.branches.push(BranchAdmittance { pos, y, dy_du: dy });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures::*;

    fn single_line(tap: f64) -> AdmittanceModel {
        let mut c = two_bus(0.0, 0.0);
        c.branches[0].x = 1.0;
        let mut s = GridState::flat(&c);
        s.tap[0] = tap;
        build_admittance(&c, &s).unwrap()
    }

    #[test]
    fn single_line_matrix() {
        let y = single_line(1.0);
        let b = y.b_matrix().to_dense();
        assert_eq!(b, nalgebra::DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        assert!(y.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tap_scales_from_side() {
        let y = single_line(2.0);
        let b = y.b_matrix().to_dense();
        assert!((b[(0, 0)] + 0.25).abs() < 1e-15);
        assert!((b[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((b[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((b[(1, 1)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn tap_derivative_matches_difference() {
        let c = {
            let mut c = two_bus(0.0, 0.0);
            c.branches[0].r = 0.02;
            c.branches[0].b = 0.3;
            c.branches[0].shift = 0.1;
            c
        };
        let mut s = GridState::flat(&c);
        s.tap[0] = 1.05;
        let y0 = build_admittance(&c, &s).unwrap();
        let h = 1e-6;
        s.tap[0] = 1.05 + h;
        let yp = build_admittance(&c, &s).unwrap();
        s.tap[0] = 1.05 - h;
        let ym = build_admittance(&c, &s).unwrap();
        let br = &y0.branches[0];
        for (k, &p) in br.pos.iter().enumerate() {
            let dg = (yp.g[p] - ym.g[p]) / (2.0 * h);
            let db = (yp.b[p] - ym.b[p]) / (2.0 * h);
            assert!((dg - br.dy_du[k].re).abs() < 1e-7);
            assert!((db - br.dy_du[k].im).abs() < 1e-7);
        }
    }
}
