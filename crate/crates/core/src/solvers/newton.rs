use super::{initial_point, run_iterations, Problem, SolveReport, SolverConfig, Step};
use crate::error::{LfError, Result};
use crate::linalg::{self, SparseLu, Triplets};
use crate::manifold::{
    lagrangian_hessian_qe, FlowLinearSystem, ManifoldKind, ProjectionContext, QePoint, TangentVector,
};
use crate::network::RadialNetwork;

/// Solve `hess f(u)[ζ] = −grad f(u)` on the tangent space through the
/// saddle-point system `[W Jᵀ; J 0] [ζ; μ] = [−grad; 0]`, where `W` is the
/// Hessian of the Lagrangian. On tangent vectors `Π W ζ` equals the
/// Riemannian Hessian, so the solution `ζ` is the Newton direction.
pub(crate) fn newton_direction_with(
    ctx: &ProjectionContext,
    sys: &FlowLinearSystem,
    net: &RadialNetwork,
    u: &QePoint,
    grad: &[f64],
) -> Result<TangentVector> {
    let j = net.j();
    let n = 4 * j;
    let w = lagrangian_hessian_qe(ctx, sys, net, u);
    let dh = ctx.differential();
    let mut t = Triplets::with_capacity(n + j, n + j, w.nnz() + 2 * dh.nnz());
    for (r, c, v) in w.entries() {
        t.push(r, c, v);
    }
    for (r, c, v) in dh.entries() {
        t.push(n + r, c, v);
        t.push(c, n + r, v);
    }
    let kkt = t.to_csc();
    let lu = SparseLu::factor(&kkt)
        .map_err(|_| LfError::SingularHessian("Newton saddle-point system is singular".into()))?;
    let mut rhs = linalg::scale(grad, -1.0);
    rhs.resize(n + j, 0.0);
    let mut sol = lu.solve(&rhs);
    if !sol.iter().all(|s| s.is_finite()) {
        return Err(LfError::SingularHessian("non-finite Newton direction".into()));
    }
    sol.truncate(n);
    Ok(TangentVector {
        kind: ManifoldKind::Qe,
        data: sol,
    })
}

/// Riemannian Newton direction for `f_QE` at `u`.
pub fn newton_direction_qe(net: &RadialNetwork, u: &QePoint) -> Result<TangentVector> {
    let sys = crate::manifold::linear_part(net)?;
    let ctx = ProjectionContext::for_qe(net, u)?;
    let grad = crate::manifold::grad_qe_with(&ctx, &sys, u);
    newton_direction_with(&ctx, &sys, net, u, &grad.data)
}

/// Riemannian Newton's method on the QE manifold: unit steps, no line search.
/// Declared divergent when `f` grows for 10 consecutive iterations.
pub fn solve_newton_qe(net: &RadialNetwork, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let prob = Problem::new(net, ManifoldKind::Qe, cfg.retraction_for(ManifoldKind::Qe)?)?;
    let x0 = initial_point(net, ManifoldKind::Qe, cfg.init)?;
    Ok(run_iterations(&prob, x0, cfg, Some(10), |x, _fx, ctx, grad| {
        let u = QePoint::from_vec(x.to_vec());
        let zeta = match newton_direction_with(ctx, &prob.sys, net, &u, &grad.data) {
            Ok(z) => z,
            Err(e) => return Step::Failed(e),
        };
        match prob.retract(&linalg::add_scaled(x, 1.0, &zeta.data)) {
            Ok(point) => {
                let f = prob.objective(&point);
                Step::Accepted { point, f, step: 1.0 }
            }
            Err(e) => Step::Failed(e),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{grad_qe, hess_qe_apply, linear_part};
    use crate::solvers::{init_warm, InitKind};

    #[test]
    fn newton_equation_residual_case33bw() {
        let net = crate::cases::load("case33bw").unwrap();
        let sys = linear_part(&net).unwrap();
        for init in [InitKind::Flat, InitKind::Warm] {
            let u = QePoint::from_vec(crate::solvers::initial_point(&net, ManifoldKind::Qe, init).unwrap());
            let zeta = newton_direction_qe(&net, &u).unwrap();
            let h = hess_qe_apply(&sys, &net, &u, &zeta).unwrap();
            let g = grad_qe(&sys, &net, &u).unwrap();
            let r = linalg::norm2(&linalg::add_scaled(&h.data, 1.0, &g.data));
            assert!(r <= 1e-9 * g.norm(), "{init}: residual {r}, grad {}", g.norm());
            let ctx = ProjectionContext::for_qe(&net, &u).unwrap();
            assert!(ctx.tangent_defect(&zeta.data) < 1e-9);
        }
    }

    #[test]
    fn converges_on_case33bw() {
        let net = crate::cases::load("case33bw").unwrap();
        let rep = solve_newton_qe(&net, &SolverConfig::default()).unwrap();
        assert!(rep.converged, "{:?}", rep.failure);
        let rep_pan = crate::solvers::solve_pan(ManifoldKind::Qe, &net, &SolverConfig::default()).unwrap();
        let d = crate::solvers::max_voltage_change(rep.voltages(), rep_pan.voltages());
        assert!(d < 1e-6);
        let u = QePoint::from_vec(init_warm(&net, ManifoldKind::Qe).unwrap());
        assert!(newton_direction_qe(&net, &u).unwrap().norm() > 0.0);
    }
}
