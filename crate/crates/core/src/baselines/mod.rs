//! Classical reference methods: LinDistFlow, backward-forward sweep and
//! polar Newton-Raphson, plus angle recovery and voltage comparison.

mod bfs;
mod nr;

use num_complex::Complex64;

use crate::error::{LfError, Result};
use crate::linalg::{SparseLu, Triplets};
use crate::manifold::{upstream_v, Layout, QePoint};
use crate::network::RadialNetwork;

pub use bfs::bfs_solve;
pub use nr::{newton_raphson, ybus_build, PolarSolution, YBus};

/// Solve the branch flow equations with the loss terms dropped. The result
/// has `l = 0`.
pub fn lindistflow_solve(net: &RadialNetwork) -> Result<QePoint> {
    let j = net.j();
    // unknowns (P, Q, v) in blocks 0, 1, 2; l columns of A dropped
    let lay = Layout { j };
    let mut t = Triplets::with_capacity(3 * j, 3 * j, 8 * j);
    let vcol = |k: usize| 2 * j + k;
    for (k, line) in net.lines().iter().enumerate() {
        let a2 = line.tap * line.tap;
        for &c in net.topo().children_of_line(k) {
            t.push(k, lay.p(c), 1.0);
            t.push(j + k, lay.q(c), 1.0);
        }
        t.push(k, lay.p(k), -1.0);
        t.push(k, vcol(k), net.shunt_g()[k]);
        t.push(j + k, lay.q(k), -1.0);
        t.push(j + k, vcol(k), -net.shunt_b()[k]);
        let row = 2 * j + k;
        t.push(row, vcol(k), 1.0);
        if let Some(pk) = line.parent_line() {
            t.push(row, vcol(pk), -1.0 / a2);
        }
        t.push(row, lay.p(k), 2.0 * line.r);
        t.push(row, lay.q(k), 2.0 * line.x);
    }
    let mut rhs = Vec::with_capacity(3 * j);
    rhs.extend_from_slice(net.p_inj());
    rhs.extend_from_slice(net.q_inj());
    rhs.extend(net.lines().iter().map(|l| match l.parent_line() {
        None => net.v0() / (l.tap * l.tap),
        Some(_) => 0.0,
    }));
    let lu = SparseLu::factor(&t.to_csc()).map_err(|_| LfError::SingularSystem("LinDistFlow equations".into()))?;
    let s = lu.solve(&rhs);
    if !s.iter().all(|x| x.is_finite()) {
        return Err(LfError::SingularSystem("LinDistFlow equations".into()));
    }
    Ok(QePoint::from_parts(&s[..j], &s[j..2 * j], &vec![0.0; j], &s[2 * j..]))
}

/// Voltage angles of nodes `0..=J` (slack at 0) from branch flows and
/// squared voltages, sweeping root to leaf with
/// `θ_j = θ_i − arg(v_i/a² − (r − ix)(P + iQ))`.
pub fn recover_angles(net: &RadialNetwork, u: &QePoint) -> Result<Vec<f64>> {
    let (p, q, v) = (u.flow_p(), u.flow_q(), u.voltage());
    let mut theta = vec![0.0; net.j() + 1];
    for &k in &net.topo().forward {
        let line = net.line(k);
        let vi = upstream_v(net, v, k);
        if !(vi > 0.0) {
            return Err(LfError::NonPositiveVoltage { line: k + 1, value: vi });
        }
        let w = Complex64::new(vi / (line.tap * line.tap), 0.0)
            - Complex64::new(line.r, -line.x) * Complex64::new(p[k], q[k]);
        theta[k + 1] = theta[line.upstream] - w.arg();
    }
    Ok(theta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageComparison {
    /// Node-wise `|√v_a − √v_b|`.
    pub errors: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

/// Compare two squared-voltage profiles by magnitude.
pub fn solution_compare(a: &[f64], b: &[f64]) -> Result<VoltageComparison> {
    if a.len() != b.len() {
        return Err(LfError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let errors: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x.sqrt() - y.sqrt()).abs()).collect();
    let max = errors.iter().copied().fold(0.0, f64::max);
    let mean = if errors.is_empty() {
        0.0
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    Ok(VoltageComparison { errors, max, mean })
}
