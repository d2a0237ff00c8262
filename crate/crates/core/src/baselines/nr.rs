use std::time::Instant;

use num_complex::Complex64;

use super::{lindistflow_solve, recover_angles};
use crate::error::{LfError, Result};
use crate::linalg::{self, SparseLu, Triplets};
use crate::manifold::QePoint;
use crate::network::RadialNetwork;
use crate::solvers::{InitKind, IterRecord, SolveReport, SolverConfig};

/// Sparse complex bus admittance matrix over nodes `0..=J`.
#[derive(Debug, Clone, PartialEq)]
pub struct YBus {
    /// Row-wise `(column, value)` lists, columns ascending.
    pub rows: Vec<Vec<(usize, Complex64)>>,
}

impl YBus {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, k: usize) -> Complex64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == k)
            .map_or(Complex64::new(0.0, 0.0), |(_, y)| *y)
    }

    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(c, y)| y * v[*c]).sum())
            .collect()
    }
}

/// Series admittances with the tap at the upstream end
/// (`Y_ff = y/a²`, `Y_ft = Y_tf = −y/a`, `Y_tt = y`) plus the nodal shunts
/// `G + iB`.
pub fn ybus_build(net: &RadialNetwork) -> YBus {
    let n = net.j() + 1;
    let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    let mut add = |i: usize, k: usize, y: Complex64| match rows[i].iter_mut().find(|(c, _)| *c == k) {
        Some((_, val)) => *val += y,
        None => rows[i].push((k, y)),
    };
    for (k, line) in net.lines().iter().enumerate() {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x);
        let (f, t, a) = (line.upstream, k + 1, line.tap);
        add(f, f, ys / (a * a));
        add(t, t, ys);
        add(f, t, -ys / a);
        add(t, f, -ys / a);
        add(t, t, Complex64::new(net.shunt_g()[k], net.shunt_b()[k]));
    }
    rows.iter_mut().for_each(|r| r.sort_by_key(|(c, _)| *c));
    YBus { rows }
}

/// Polar voltages of nodes `0..=J` and the branch quantities they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// `(P, Q, l, v)` recomputed from the polar voltages.
    pub flows: QePoint,
}

fn phasors(vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
}

fn branch_flows(net: &RadialNetwork, v: &[Complex64]) -> QePoint {
    let j = net.j();
    let (mut p, mut q, mut l) = (vec![0.0; j], vec![0.0; j], vec![0.0; j]);
    for (k, line) in net.lines().iter().enumerate() {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x);
        let a = line.tap;
        let i_f = ys / (a * a) * v[line.upstream] - ys / a * v[k + 1];
        let s = v[line.upstream] * i_f.conj();
        p[k] = s.re;
        q[k] = s.im;
        l[k] = i_f.norm_sqr();
    }
    let vsq: Vec<f64> = v[1..].iter().map(|x| x.norm_sqr()).collect();
    QePoint::from_parts(&p, &q, &l, &vsq)
}

/// `S_calc − S_known` for nodes `1..=J`, stacked as (real, reactive).
fn mismatch(net: &RadialNetwork, y: &YBus, v: &[Complex64]) -> (Vec<f64>, Vec<Complex64>) {
    let j = net.j();
    let current = y.mul(v);
    let mut f = vec![0.0; 2 * j];
    for k in 0..j {
        let s = v[k + 1] * current[k + 1].conj();
        f[k] = s.re - net.p_inj()[k];
        f[j + k] = s.im - net.q_inj()[k];
    }
    (f, current)
}

fn jacobian(net: &RadialNetwork, y: &YBus, v: &[Complex64], current: &[Complex64]) -> crate::linalg::CscMatrix {
    let j = net.j();
    let i_unit = Complex64::new(0.0, 1.0);
    let mut t = Triplets::with_capacity(2 * j, 2 * j, 16 * j);
    for i in 1..=j {
        let vhat_i = v[i] / v[i].norm();
        for &(k, yik) in &y.rows[i] {
            if k == 0 {
                continue;
            }
            let vhat_k = v[k] / v[k].norm();
            let mut ds_da = i_unit * v[i] * (-(yik * v[k])).conj();
            let mut ds_dm = v[i] * (yik * vhat_k).conj();
            if k == i {
                ds_da += i_unit * v[i] * current[i].conj();
                ds_dm += current[i].conj() * vhat_i;
            }
            let (r, c) = (i - 1, k - 1);
            t.push(r, c, ds_da.re);
            t.push(r, j + c, ds_dm.re);
            t.push(j + r, c, ds_da.im);
            t.push(j + r, j + c, ds_dm.im);
        }
    }
    t.to_csc()
}

/// Polar Newton-Raphson with every non-slack node PQ.
///
/// Stops when the largest power mismatch is within `eps_grad` and the
/// largest magnitude update within `eps_volt`. The Warm start takes
/// magnitudes from LinDistFlow and angles from [`recover_angles`].
pub fn newton_raphson(net: &RadialNetwork, init: InitKind, cfg: &SolverConfig) -> Result<(SolveReport, PolarSolution)> {
    let start = Instant::now();
    let j = net.j();
    let y = ybus_build(net);
    let (mut vm, mut va) = match init {
        InitKind::Flat => (vec![net.v0().sqrt(); j + 1], vec![0.0; j + 1]),
        InitKind::Warm => {
            let u = lindistflow_solve(net)?;
            if let Some(k) = u.voltage().iter().position(|&v| !(v > 0.0)) {
                return Err(LfError::NonPositiveVoltage {
                    line: k + 1,
                    value: u.voltage()[k],
                });
            }
            let mut vm = vec![net.v0().sqrt()];
            vm.extend(u.voltage().iter().map(|v| v.sqrt()));
            (vm, recover_angles(net, &u)?)
        }
    };
    let mut v = phasors(&vm, &va);
    let (mut f, mut current) = mismatch(net, &y, &v);
    let init_stats = (linalg::dot(&f, &f), linalg::norm_inf(&f));
    let finish = |vm: Vec<f64>, va: Vec<f64>, trajectory: Vec<IterRecord>, converged: bool, failure| {
        let flows = branch_flows(net, &phasors(&vm, &va));
        let report = SolveReport {
            converged,
            iterations: trajectory.len(),
            initial_f: init_stats.0,
            initial_grad_norm: init_stats.1,
            trajectory,
            solution: flows.clone(),
            injections: None,
            angles: Some(va.clone()),
            failure,
        };
        (report, PolarSolution { vm, va, flows })
    };
    if init_stats.1 <= cfg.eps_grad {
        return Ok(finish(vm, va, Vec::new(), true, None));
    }
    let mut trajectory = Vec::new();
    for iter in 1..=cfg.max_iter {
        let jac = jacobian(net, &y, &v, &current);
        let lu = match SparseLu::factor(&jac) {
            Ok(lu) => lu,
            Err(_) => {
                let e = LfError::SingularJacobian(format!("iteration {iter}"));
                return Ok(finish(vm, va, trajectory, false, Some(e)));
            }
        };
        let dx = lu.solve(&f);
        for k in 0..j {
            va[k + 1] -= dx[k];
            vm[k + 1] -= dx[j + k];
        }
        let dvm = linalg::norm_inf(&dx[j..]);
        v = phasors(&vm, &va);
        (f, current) = mismatch(net, &y, &v);
        let mis = linalg::norm_inf(&f);
        trajectory.push(IterRecord {
            iter,
            f: linalg::dot(&f, &f),
            grad_norm: mis,
            max_dv: dvm,
            step: 1.0,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if mis <= cfg.eps_grad && dvm <= cfg.eps_volt {
            return Ok(finish(vm, va, trajectory, true, None));
        }
        if !mis.is_finite() {
            let e = LfError::Diverged("power mismatch is not finite".into());
            return Ok(finish(vm, va, trajectory, false, Some(e)));
        }
    }
    Ok(finish(
        vm,
        va,
        trajectory,
        false,
        Some(LfError::MaxIterExceeded(cfg.max_iter)),
    ))
}
