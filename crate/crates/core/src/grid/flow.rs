use super::{AdmittanceModel, GridCase, GridState};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// A power-balance row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Balance {
    P(usize),
    Q(usize),
}

/// A quantity the balance equations depend on. Indices are internal
/// (bus, generator, branch, switched shunt).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridVar {
    Va(usize),
    Vm(usize),
    Pg(usize),
    Qg(usize),
    Tap(usize),
    Shunt(usize),
}

/// Mismatches `P_i = p_inj − Σ v_i v_k (G cos δ_ik + B sin δ_ik)` and
/// `Q_i = q_inj − Σ v_i v_k (G sin δ_ik − B cos δ_ik)`.
pub fn pf_residual(case: &GridCase, y: &AdmittanceModel, s: &GridState) -> Result<(Vec<f64>, Vec<f64>)> {
    s.check(case)?;
    let n = case.n_bus();
    if let Some(i) = s.va.iter().chain(&s.vm).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "bus voltage", index: i % n });
    }
    let mut p: Vec<f64> = case.buses.iter().map(|b| -b.pd).collect();
    let mut q: Vec<f64> = case.buses.iter().map(|b| -b.qd).collect();
    for (g, gen) in case.generators.iter().enumerate() {
        p[gen.bus] += s.pg[g];
        q[gen.bus] += s.qg[g];
    }
    for i in 0..n {
        let (mut pf, mut qf) = (0.0, 0.0);
        for (k, g, b) in y.row(i) {
            let (sin, cos) = (s.va[i] - s.va[k]).sin_cos();
            pf += s.vm[k] * (g * cos + b * sin);
            qf += s.vm[k] * (g * sin - b * cos);
        }
        p[i] -= s.vm[i] * pf;
        q[i] -= s.vm[i] * qf;
    }
    Ok((p, q))
}

/// Every structural partial derivative of the mismatches, including exact
/// zeros, so the emitted pattern does not depend on the state.
pub fn pf_partials(
    case: &GridCase,
    y: &AdmittanceModel,
    s: &GridState,
    mut emit: impl FnMut(Balance, GridVar, f64),
) -> Result<()> {
    s.check(case)?;
    let n = case.n_bus();
    for i in 0..n {
        let vi = s.vm[i];
        let (mut dp_dai, mut dq_dai, mut dp_dvi, mut dq_dvi) = (0.0, 0.0, 0.0, 0.0);
        for (k, g, b) in y.row(i) {
            if k == i {
                dp_dvi += 2.0 * g * vi;
                dq_dvi -= 2.0 * b * vi;
                continue;
            }
            let vk = s.vm[k];
            let (sin, cos) = (s.va[i] - s.va[k]).sin_cos();
            let a = g * cos + b * sin;
            let c = g * sin - b * cos;
            // flow derivatives, negated for the mismatch
            emit(Balance::P(i), GridVar::Va(k), -(vi * vk * c));
            emit(Balance::Q(i), GridVar::Va(k), vi * vk * a);
            emit(Balance::P(i), GridVar::Vm(k), -(vi * a));
            emit(Balance::Q(i), GridVar::Vm(k), -(vi * c));
            dp_dai -= vi * vk * c;
            dq_dai += vi * vk * a;
            dp_dvi += vk * a;
            dq_dvi += vk * c;
        }
        emit(Balance::P(i), GridVar::Va(i), -dp_dai);
        emit(Balance::Q(i), GridVar::Va(i), -dq_dai);
        emit(Balance::P(i), GridVar::Vm(i), -dp_dvi);
        emit(Balance::Q(i), GridVar::Vm(i), -dq_dvi);
    }
    for (g, gen) in case.generators.iter().enumerate() {
        emit(Balance::P(gen.bus), GridVar::Pg(g), 1.0);
        emit(Balance::Q(gen.bus), GridVar::Qg(g), 1.0);
    }
    for (k, br) in case.branches.iter().enumerate() {
        let d = &y.branches[k].dy_du;
        let (f, t) = (br.from, br.to);
        let (vf, vt) = (s.vm[f], s.vm[t]);
        let (sin, cos) = (s.va[f] - s.va[t]).sin_cos();
        let dpf = vf * vf * d[0].re + vf * vt * (d[1].re * cos + d[1].im * sin);
        let dqf = -vf * vf * d[0].im + vf * vt * (d[1].re * sin - d[1].im * cos);
        // δ_tf = −δ_ft
        let dpt = vt * vf * (d[2].re * cos - d[2].im * sin);
        let dqt = vt * vf * (-d[2].re * sin - d[2].im * cos);
        emit(Balance::P(f), GridVar::Tap(k), -dpf);
        emit(Balance::Q(f), GridVar::Tap(k), -dqf);
        emit(Balance::P(t), GridVar::Tap(k), -dpt);
        emit(Balance::Q(t), GridVar::Tap(k), -dqt);
    }
    for (k, sh) in case.shunts.iter().enumerate() {
        let v = s.vm[sh.bus];
        emit(Balance::Q(sh.bus), GridVar::Shunt(k), v * v);
    }
    Ok(())
}

/// Jacobian of `[P; Q]` (rows `0..n` then `n..2n`) with respect to the
/// selected variables; `column` maps a variable to its column or drops it.
pub fn pf_jacobian(
    case: &GridCase,
    y: &AdmittanceModel,
    s: &GridState,
    ncols: usize,
    column: impl Fn(GridVar) -> Option<usize>,
) -> Result<CsrMatrix> {
    let n = case.n_bus();
    let mut t = Vec::new();
    pf_partials(case, y, s, |row, var, v| {
        if let Some(c) = column(var) {
            let r = match row {
                Balance::P(i) => i,
                Balance::Q(i) => n + i,
            };
            t.push((r, c, v));
        }
    })?;
    if let Some(&(_, c, _)) = t.iter().find(|e| e.1 >= ncols) {
        return Err(Error::DimensionMismatch { expected: ncols, got: c + 1 });
    }
    Ok(CsrMatrix::from_triplets(2 * n, ncols, &t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_admittance;
    use crate::grid::fixtures::*;

    #[test]
    fn lossless_flat_network_balances() {
        let c = two_bus(0.0, 0.0);
        let s = GridState::flat(&c);
        let y = build_admittance(&c, &s).unwrap();
        let (p, q) = pf_residual(&c, &y, &s).unwrap();
        assert!(p.iter().chain(&q).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn two_bus_flat_start_mismatch() {
        let c = two_bus(0.5, 0.2);
        let s = GridState::flat(&c);
        let y = build_admittance(&c, &s).unwrap();
        let (p, q) = pf_residual(&c, &y, &s).unwrap();
        assert!((p[1] + 0.5).abs() < 1e-15 && (q[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn generator_columns_are_unit() {
        let c = two_bus(0.5, 0.2);
        let s = GridState::flat(&c);
        let y = build_admittance(&c, &s).unwrap();
        let j = pf_jacobian(&c, &y, &s, 2, |v| match v {
            GridVar::Pg(0) => Some(0),
            GridVar::Qg(0) => Some(1),
            _ => None,
        })
        .unwrap();
        assert_eq!(j.get(0, 0), 1.0);
        assert_eq!(j.get(2, 1), 1.0);
        // bus 1 has no generator
        assert_eq!(j.row(1).count(), 0);
        assert_eq!(j.row(3).count(), 0);
    }
}
