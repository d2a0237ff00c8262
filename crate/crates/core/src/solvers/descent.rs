use super::{armijo, initial_point, run_iterations, Problem, SolveReport, SolverConfig, Step};
use crate::error::Result;
use crate::linalg;
use crate::manifold::ManifoldKind;
use crate::network::RadialNetwork;

/// Riemannian gradient descent with direction `−grad f` and Armijo steps.
pub fn solve_gd(manifold: ManifoldKind, net: &RadialNetwork, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let prob = Problem::new(net, manifold, cfg.retraction_for(manifold)?)?;
    let x0 = initial_point(net, manifold, cfg.init)?;
    let alpha_bar = cfg.armijo.alpha_bar.unwrap_or(match manifold {
        ManifoldKind::Bfm => 4.5,
        ManifoldKind::Qe => 1.0,
    });
    Ok(run_iterations(&prob, x0, cfg, None, |x, fx, _ctx, grad| {
        let xi = linalg::scale(&grad.data, -1.0);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::{path_network, two_bus};

    #[test]
    fn zero_load_needs_no_iterations() {
        let net = path_network(4, 0.0, 0.0);
        for m in [ManifoldKind::Qe, ManifoldKind::Bfm] {
            let rep = solve_gd(m, &net, &SolverConfig::default()).unwrap();
            assert!(rep.converged);
            assert_eq!(rep.iterations, 0);
        }
    }

    #[test]
    fn two_bus_descends_monotonically() {
        for m in [ManifoldKind::Qe, ManifoldKind::Bfm] {
            let rep = solve_gd(m, &two_bus(), &SolverConfig::default()).unwrap();
            assert!(rep.converged, "{m:?}: {:?}", rep.failure);
            let mut prev = rep.initial_f;
            for r in &rep.trajectory {
                assert!(r.f < prev);
                prev = r.f;
            }
        }
    }

    #[test]
    fn iteration_cap_is_reported() {
        let cfg = SolverConfig {
            max_iter: 3,
            ..SolverConfig::default()
        };
        let net = crate::cases::load("case33bw").unwrap();
        let rep = solve_gd(ManifoldKind::Qe, &net, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert!(matches!(rep.failure, Some(crate::LfError::MaxIterExceeded(3))));
    }
}
