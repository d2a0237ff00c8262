use std::fmt;
use std::str::FromStr;

use radflow::baselines::{bfs_solve, lindistflow_solve, newton_raphson, recover_angles};
use radflow::manifold::{grad_qe, linear_part, objective_qe, ManifoldKind, QePoint};
use radflow::network::RadialNetwork;
use radflow::retraction::RetractionKind;
use radflow::solvers::{
    initial_point, max_voltage_change, pan_first_iteration, solve_gd, solve_newton_qe, solve_pan, IterRecord,
    SolverConfig,
};
use radflow::LfError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GdBfm,
    GdQe,
    NewtonQe,
    PanBfm,
    PanQe,
    Nr,
    Bfs,
    LinDistFlow,
    Approx1,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::GdBfm,
        Method::GdQe,
        Method::NewtonQe,
        Method::PanBfm,
        Method::PanQe,
        Method::Nr,
        Method::Bfs,
        Method::LinDistFlow,
        Method::Approx1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GdBfm => "gd-bfm",
            Method::GdQe => "gd-qe",
            Method::NewtonQe => "newton-qe",
            Method::PanBfm => "pan-bfm",
            Method::PanQe => "pan-qe",
            Method::Nr => "nr",
            Method::Bfs => "bfs",
            Method::LinDistFlow => "lindistflow",
            Method::Approx1 => "approx1",
        }
    }

    /// Manifold whose retractions the method accepts, if any.
    pub fn manifold(self) -> Option<ManifoldKind> {
        match self {
            Method::GdBfm | Method::PanBfm | Method::Bfs => Some(ManifoldKind::Bfm),
            Method::GdQe | Method::NewtonQe | Method::PanQe | Method::Approx1 => Some(ManifoldKind::Qe),
            Method::Nr | Method::LinDistFlow => None,
        }
    }

    /// Reject a retraction that the method cannot use.
    pub fn check_retraction(self, retraction: Option<RetractionKind>) -> Result<(), LfError> {
        let Some(kind) = retraction else {
            return Ok(());
        };
        match self.manifold() {
            Some(m) if kind.manifold() == m => Ok(()),
            Some(_) => Err(LfError::InvalidConfig(format!(
                "retraction {kind} cannot be used with method {self}"
            ))),
            None => Err(LfError::InvalidConfig(format!("method {self} takes no retraction"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = LfError;

    fn from_str(s: &str) -> Result<Self, LfError> {
        let s = s.trim().to_ascii_lowercase();
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            LfError::InvalidConfig(format!("unknown method `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Result of one method run, in the shape the writers need.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub converged: bool,
    pub iterations: usize,
    pub trajectory: Vec<IterRecord>,
    pub solution: QePoint,
    /// Node voltage angles `0..=J`, slack first.
    pub angles: Vec<f64>,
    pub failure: Option<LfError>,
}

impl Outcome {
    /// Squared voltages of nodes `1..=J`.
    pub fn voltages(&self) -> &[f64] {
        self.solution.voltage()
    }
}

fn angles_or_zero(net: &RadialNetwork, u: &QePoint) -> Vec<f64> {
    recover_angles(net, u).unwrap_or_else(|e| {
        log::warn!("angle recovery failed ({e}); reporting zero angles");
        vec![0.0; net.j() + 1]
    })
}

/// Run `method` on `net`. Errors are configuration or setup failures;
/// failures during the iteration are reported in the outcome.
pub fn run(method: Method, net: &RadialNetwork, cfg: &SolverConfig) -> Result<Outcome, LfError> {
    cfg.validate()?;
    method.check_retraction(cfg.retraction)?;
    let report = match method {
        Method::GdBfm => solve_gd(ManifoldKind::Bfm, net, cfg)?,
        Method::GdQe => solve_gd(ManifoldKind::Qe, net, cfg)?,
        Method::NewtonQe => solve_newton_qe(net, cfg)?,
        Method::PanBfm => solve_pan(ManifoldKind::Bfm, net, cfg)?,
        Method::PanQe => solve_pan(ManifoldKind::Qe, net, cfg)?,
        Method::Bfs => bfs_solve(net, cfg)?,
        Method::Nr => {
            let (report, polar) = newton_raphson(net, cfg.init, cfg)?;
            return Ok(Outcome {
                converged: report.converged,
                iterations: report.iterations,
                trajectory: report.trajectory,
                solution: polar.flows,
                angles: polar.va,
                failure: report.failure,
            });
        }
        Method::LinDistFlow => {
            let u = lindistflow_solve(net)?;
            return Ok(Outcome {
                converged: true,
                iterations: 0,
                trajectory: Vec::new(),
                angles: angles_or_zero(net, &u),
                solution: u,
                failure: None,
            });
        }
        Method::Approx1 => {
            let start = std::time::Instant::now();
            let u0 = QePoint::from_vec(initial_point(net, ManifoldKind::Qe, cfg.init)?);
            let u = pan_first_iteration(net, cfg)?;
            let sys = linear_part(net)?;
            let record = IterRecord {
                iter: 1,
                f: objective_qe(&sys, &u),
                grad_norm: grad_qe(&sys, net, &u)?.norm(),
                max_dv: max_voltage_change(u0.voltage(), u.voltage()),
                step: 1.0,
                time_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            return Ok(Outcome {
                converged: true,
                iterations: 1,
                trajectory: vec![record],
                angles: angles_or_zero(net, &u),
                solution: u,
                failure: None,
            });
        }
    };
    let angles = match report.angles {
        Some(a) => a,
        None => angles_or_zero(net, &report.solution),
    };
    Ok(Outcome {
        converged: report.converged,
        iterations: report.iterations,
        trajectory: report.trajectory,
        solution: report.solution,
        angles,
        failure: report.failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("gd".parse::<Method>().is_err());
        assert_eq!(" PAN-QE ".parse::<Method>().unwrap(), Method::PanQe);
    }

    #[test]
    fn retraction_compatibility() {
        use RetractionKind::*;
        assert!(Method::PanBfm.check_retraction(Some(BfmSweep)).is_ok());
        assert!(Method::PanBfm.check_retraction(Some(QeCurrent)).is_err());
        assert!(Method::GdQe.check_retraction(Some(QeSphere)).is_ok());
        assert!(Method::NewtonQe.check_retraction(Some(BfmSweep)).is_err());
        assert!(Method::Nr.check_retraction(Some(BfmSweep)).is_err());
        assert!(Method::Nr.check_retraction(None).is_ok());
    }
}
