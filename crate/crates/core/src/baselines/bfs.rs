use std::time::Instant;

use crate::error::{LfError, Result};
use crate::linalg;
use crate::manifold::{injection_target, objective_bfm, BfmPoint, ManifoldKind};
use crate::network::RadialNetwork;
use crate::retraction::retract_bfm;
use crate::solvers::{initial_point, max_voltage_change, IterRecord, SolveReport, SolverConfig};

/// Leaf-to-root sweep: sending-end flows that meet the known injections
/// under the current voltages.
fn backward_sweep(net: &RadialNetwork, x: &BfmPoint) -> Vec<f64> {
    let j = net.j();
    let v = x.voltage();
    let mut flows = vec![0.0; 6 * j];
    for k in net.topo().backward() {
        let line = net.line(k);
        let a2 = line.tap * line.tap;
        let children = net.topo().children_of_line(k);
        let sp: f64 = children.iter().map(|&c| flows[c]).sum();
        let sq: f64 = children.iter().map(|&c| flows[j + c]).sum();
        let recv_p = sp + net.shunt_g()[k] * v[k] - net.p_inj()[k];
        let recv_q = sq - net.shunt_b()[k] * v[k] - net.q_inj()[k];
        let l = (recv_p * recv_p + recv_q * recv_q) / (a2 * v[k]);
        flows[k] = recv_p + a2 * line.r * l;
        flows[j + k] = recv_q + a2 * line.x * l;
    }
    flows
}

/// Backward-forward sweep. Every iterate lies on the BFM manifold; the
/// `grad_norm` column records the largest injection mismatch. Stops when
/// that mismatch is within `eps_grad` and the voltages move by at most
/// `eps_volt`; declared divergent when `f_BFM` grows for 50 consecutive sweeps.
pub fn bfs_solve(net: &RadialNetwork, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    cfg.retraction_for(ManifoldKind::Bfm)?;
    let start = Instant::now();
    let w_bar = injection_target(net);
    let mismatch = |x: &BfmPoint| linalg::norm_inf(&linalg::sub(x.w(), &w_bar));
    let mut x = BfmPoint::from_vec(initial_point(net, ManifoldKind::Bfm, cfg.init)?);
    let mut f = objective_bfm(&x, &w_bar);
    let init = (f, mismatch(&x));
    let mut trajectory = Vec::new();
    let mut growth = 0;
    let j = net.j();
    let report = |x: &BfmPoint, converged, trajectory: Vec<IterRecord>, failure| SolveReport {
        converged,
        iterations: trajectory.len(),
        initial_f: init.0,
        initial_grad_norm: init.1,
        trajectory,
        solution: x.qe_part(),
        injections: Some(x.as_slice()[4 * j..].to_vec()),
        angles: None,
        failure,
    };
    for iter in 1..=cfg.max_iter {
        let next = match retract_bfm(net, &backward_sweep(net, &x)) {
            Ok(n) => n,
            Err(e) => return Ok(report(&x, false, trajectory, Some(e))),
        };
        let f_next = objective_bfm(&next, &w_bar);
        let dv = max_voltage_change(x.voltage(), next.voltage());
        let mis = mismatch(&next);
        trajectory.push(IterRecord {
            iter,
            f: f_next,
            grad_norm: mis,
            max_dv: dv,
            step: 1.0,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        growth = if f_next > f { growth + 1 } else { 0 };
        x = next;
        f = f_next;
        if mis <= cfg.eps_grad && dv <= cfg.eps_volt {
            return Ok(report(&x, true, trajectory, None));
        }
        if growth >= 50 || !f.is_finite() {
            let e = LfError::Diverged("sweep mismatch keeps growing".into());
            return Ok(report(&x, false, trajectory, Some(e)));
        }
    }
    Ok(report(
        &x,
        false,
        trajectory,
        Some(LfError::MaxIterExceeded(cfg.max_iter)),
    ))
}
