use super::{armijo, initial_point, run_iterations, Problem, SolveReport, SolverConfig, Step};
use crate::error::{LfError, Result};
use crate::linalg::{self, SparseLu, Triplets};
use crate::manifold::{
    bfm_differential, injection_target, qe_differential, BfmPoint, FlowLinearSystem, ManifoldKind, QePoint,
    TangentVector,
};
use crate::network::RadialNetwork;
use crate::retraction::retract;

fn solve_square(m: &crate::linalg::CscMatrix, rhs: &[f64], what: &str) -> Result<Vec<f64>> {
    let lu = SparseLu::factor(m).map_err(|_| LfError::SingularDirectionSystem(what.into()))?;
    let sol = lu.solve(rhs);
    if sol.iter().all(|s| s.is_finite()) {
        Ok(sol)
    } else {
        Err(LfError::SingularDirectionSystem(what.into()))
    }
}

/// Tangent direction on the BFM manifold that removes the injection
/// mismatch to first order: `Dh(x) ξ = 0`, `η = w̄ − w`.
pub fn pan_direction_bfm(net: &RadialNetwork, x: &BfmPoint) -> Result<TangentVector> {
    let j = net.j();
    let dh = bfm_differential(net, x);
    let mut eye = Triplets::with_capacity(2 * j, 6 * j, 2 * j);
    for i in 0..2 * j {
        eye.push(i, 4 * j + i, 1.0);
    }
    let m = dh.vstack(&eye.to_csc());
    let mut rhs = vec![0.0; 6 * j];
    let w_bar = injection_target(net);
    for (i, (t, w)) in w_bar.iter().zip(x.w()).enumerate() {
        rhs[4 * j + i] = t - w;
    }
    Ok(TangentVector {
        kind: ManifoldKind::Bfm,
        data: solve_square(&m, &rhs, "BFM tangent system with mismatch rows")?,
    })
}

/// Tangent direction on the QE manifold with `A (u + ζ) = b`.
pub fn pan_direction_qe(net: &RadialNetwork, sys: &FlowLinearSystem, u: &QePoint) -> Result<TangentVector> {
    let j = net.j();
    let m = sys.a.vstack(&qe_differential(net, u));
    let mut rhs = linalg::scale(&sys.residual(u.as_slice()), -1.0);
    rhs.resize(4 * j, 0.0);
    Ok(TangentVector {
        kind: ManifoldKind::Qe,
        data: solve_square(&m, &rhs, "QE tangent system with linear rows")?,
    })
}

/// Approximate Newton method: PAN direction, Armijo step, retraction.
pub fn solve_pan(manifold: ManifoldKind, net: &RadialNetwork, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let prob = Problem::new(net, manifold, cfg.retraction_for(manifold)?)?;
    let x0 = initial_point(net, manifold, cfg.init)?;
    let alpha_bar = cfg.armijo.alpha_bar.unwrap_or(1.0);
    Ok(run_iterations(&prob, x0, cfg, None, |x, fx, _ctx, grad| {
        let dir = match manifold {
            ManifoldKind::Qe => pan_direction_qe(net, &prob.sys, &QePoint::from_vec(x.to_vec())),
            ManifoldKind::Bfm => pan_direction_bfm(net, &BfmPoint::from_vec(x.to_vec())),
        };
        let xi = match dir {
            Ok(d) => d.data,
            Err(e) => return Step::Failed(e),
        };
        match armijo(
            |p| prob.objective(p),
            |t| prob.retract(t),
            x,
            fx,
            &xi,
            &grad.data,
            alpha_bar,
            &cfg.armijo,
        ) {
            Ok(s) => Step::Accepted {
                point: s.point,
                f: s.f,
                step: s.step,
            },
            Err(e) => Step::Failed(e),
        }
    }))
}

/// One full PAN(QE) step from the configured start: a one-shot approximate
/// load-flow solution.
pub fn pan_first_iteration(net: &RadialNetwork, cfg: &SolverConfig) -> Result<QePoint> {
    let kind = cfg.retraction_for(ManifoldKind::Qe)?;
    let sys = crate::manifold::linear_part(net)?;
    let u = QePoint::from_vec(initial_point(net, ManifoldKind::Qe, cfg.init)?);
    let zeta = pan_direction_qe(net, &sys, &u)?;
    let target = linalg::add_scaled(u.as_slice(), 1.0, &zeta.data);
    Ok(QePoint::from_vec(retract(kind, net, &target)?))
}
