//! Riemannian load-flow solvers: gradient descent, Newton and the
//! approximate Newton (PAN) method, with shared initialization, Armijo line
//! search and stopping logic.

mod descent;
mod newton;
mod pan;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::lindistflow_solve;
use crate::error::{LfError, Result};
use crate::linalg;
use crate::manifold::{
    grad_bfm_with, grad_qe_with, injection_target, objective_bfm, objective_qe, BfmPoint, FlowLinearSystem,
    ManifoldKind, ProjectionContext, QePoint, TangentVector,
};
use crate::network::RadialNetwork;
use crate::retraction::{retract, retract_bfm, retract_qe_current, RetractionKind};

pub use descent::solve_gd;
pub use newton::{newton_direction_qe, solve_newton_qe};
pub use pan::{pan_direction_bfm, pan_direction_qe, pan_first_iteration, solve_pan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKind {
    Flat,
    Warm,
}

impl FromStr for InitKind {
    type Err = LfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flat" => Ok(InitKind::Flat),
            "warm" => Ok(InitKind::Warm),
            _ => Err(LfError::InvalidConfig(format!(
                "unknown init `{s}` (expected flat or warm)"
            ))),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Flat => "flat",
            InitKind::Warm => "warm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmijoConfig {
    /// Initial trial step. `None` picks 4.5 for gradient descent on the BFM
    /// manifold and 1 otherwise.
    pub alpha_bar: Option<f64>,
    pub beta: f64,
    pub sigma: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        Self {
            alpha_bar: None,
            beta: 0.3,
            sigma: 0.05,
            max_backtracks: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub eps_grad: f64,
    pub eps_volt: f64,
    pub armijo: ArmijoConfig,
    pub max_iter: usize,
    /// `None` picks the sweep retraction on BFM and the current update on QE.
    pub retraction: Option<RetractionKind>,
    pub init: InitKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_grad: 1e-6,
            eps_volt: 1e-6,
            armijo: ArmijoConfig::default(),
            max_iter: 100_000,
            retraction: None,
            init: InitKind::Warm,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.armijo;
        if let Some(alpha) = a.alpha_bar {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(LfError::InvalidConfig(format!("alpha_bar = {alpha} must be positive")));
            }
        }
        if !(a.beta > 0.0 && a.beta < 1.0) {
            return Err(LfError::InvalidConfig(format!("beta = {} must lie in (0, 1)", a.beta)));
        }
        if !(a.sigma > 0.0 && a.sigma < 1.0) {
            return Err(LfError::InvalidConfig(format!(
                "sigma = {} must lie in (0, 1)",
                a.sigma
            )));
        }
        if !(self.eps_grad >= 0.0) || !(self.eps_volt >= 0.0) {
            return Err(LfError::InvalidConfig("tolerances must be non-negative".into()));
        }
        Ok(())
    }

    /// Retraction for `manifold`, checking compatibility.
    pub fn retraction_for(&self, manifold: ManifoldKind) -> Result<RetractionKind> {
        let kind = self.retraction.unwrap_or(match manifold {
            ManifoldKind::Bfm => RetractionKind::BfmSweep,
            ManifoldKind::Qe => RetractionKind::QeCurrent,
        });
        if kind.manifold() != manifold {
            return Err(LfError::InvalidConfig(format!(
                "retraction {kind} does not apply to the {manifold:?} manifold"
            )));
        }
        Ok(kind)
    }
}

/// One accepted iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// Objective at the new point.
    pub f: f64,
    /// Gradient norm at the new point (mismatch norm for non-gradient methods).
    pub grad_norm: f64,
    /// `max |√v_new − √v_old|`
    pub max_dv: f64,
    /// Accepted step length.
    pub step: f64,
    /// Wall time since the start of the solve.
    pub time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// Objective and gradient-norm (or mismatch) at the starting point.
    pub initial_f: f64,
    pub initial_grad_norm: f64,
    pub trajectory: Vec<IterRecord>,
    /// Final `(P, Q, l, v)`.
    pub solution: QePoint,
    /// Final injections for methods that carry them.
    pub injections: Option<Vec<f64>>,
    /// Voltage angles of nodes `0..=J`, when the method produces them.
    pub angles: Option<Vec<f64>>,
    pub failure: Option<LfError>,
}

impl SolveReport {
    /// Squared voltages of nodes `1..=J`.
    pub fn voltages(&self) -> &[f64] {
        self.solution.voltage()
    }

    pub fn final_f(&self) -> f64 {
        self.trajectory.last().map_or(self.initial_f, |r| r.f)
    }
}

/// `max_k |√a_k − √b_k|`
pub fn max_voltage_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.sqrt() - y.sqrt()).abs())
        .fold(0.0, |m, d| if d.is_nan() || m.is_nan() { f64::NAN } else { m.max(d) })
}

/// Stop iff the gradient and the voltage change are both within tolerance.
pub fn stop_check(v_prev: &[f64], v_next: &[f64], grad_norm: f64, cfg: &SolverConfig) -> bool {
    grad_norm <= cfg.eps_grad && max_voltage_change(v_prev, v_next) <= cfg.eps_volt
}

/// Outcome of a successful line search.
#[derive(Debug, Clone)]
pub struct ArmijoStep {
    pub m: usize,
    pub step: f64,
    pub point: Vec<f64>,
    pub f: f64,
}

/// Find the smallest `m` with
/// `f(x) − f(R(x + βᵐ ᾱ ξ)) ≥ −σ ⟨grad, βᵐ ᾱ ξ⟩`.
/// Retraction failures at a trial point count as rejections.
#[allow(clippy::too_many_arguments)]
pub fn armijo<F, R>(
    f_eval: F,
    retraction: R,
    x: &[f64],
    fx: f64,
    xi: &[f64],
    grad: &[f64],
    alpha_bar: f64,
    cfg: &ArmijoConfig,
) -> Result<ArmijoStep>
where
    F: Fn(&[f64]) -> f64,
    R: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let slope = linalg::dot(grad, xi);
    let mut step = alpha_bar;
    for m in 0..=cfg.max_backtracks {
        if let Ok(point) = retraction(&linalg::add_scaled(x, step, xi)) {
            let f = f_eval(&point);
            if f.is_finite() && fx - f >= -cfg.sigma * step * slope {
                return Ok(ArmijoStep { m, step, point, f });
            }
        }
        step *= cfg.beta;
    }
    Err(LfError::LineSearchFailed {
        backtracks: cfg.max_backtracks,
    })
}

/// Flat start, `P = Q = l = 0` and `v = v0`, retracted onto `manifold`.
pub fn init_flat(net: &RadialNetwork, manifold: ManifoldKind) -> Result<Vec<f64>> {
    let j = net.j();
    let mut u = vec![0.0; 4 * j];
    u[3 * j..].iter_mut().for_each(|v| *v = net.v0());
    retract_init(net, manifold, u)
}

/// LinDistFlow start, retracted onto `manifold`.
pub fn init_warm(net: &RadialNetwork, manifold: ManifoldKind) -> Result<Vec<f64>> {
    let u = lindistflow_solve(net)?.into_vec();
    retract_init(net, manifold, u)
}

fn retract_init(net: &RadialNetwork, manifold: ManifoldKind, mut u: Vec<f64>) -> Result<Vec<f64>> {
    Ok(match manifold {
        ManifoldKind::Qe => retract_qe_current(net, &u)?.into_vec(),
        ManifoldKind::Bfm => {
            u.resize(6 * net.j(), 0.0);
            retract_bfm(net, &u)?.into_vec()
        }
    })
}

pub fn initial_point(net: &RadialNetwork, manifold: ManifoldKind, init: InitKind) -> Result<Vec<f64>> {
    match init {
        InitKind::Flat => init_flat(net, manifold),
        InitKind::Warm => init_warm(net, manifold),
    }
}

/// Objective, gradient and projection context for one manifold.
pub(crate) struct Problem<'a> {
    pub net: &'a RadialNetwork,
    pub sys: FlowLinearSystem,
    pub manifold: ManifoldKind,
    pub retraction: RetractionKind,
    w_bar: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(net: &'a RadialNetwork, manifold: ManifoldKind, retraction: RetractionKind) -> Result<Self> {
        Ok(Self {
            net,
            sys: crate::manifold::linear_part(net)?,
            manifold,
            retraction,
            w_bar: injection_target(net),
        })
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        match self.manifold {
            ManifoldKind::Qe => objective_qe(&self.sys, &QePoint::from_vec(x.to_vec())),
            ManifoldKind::Bfm => objective_bfm(&BfmPoint::from_vec(x.to_vec()), &self.w_bar),
        }
    }

    pub fn context(&self, x: &[f64]) -> Result<ProjectionContext> {
        match self.manifold {
            ManifoldKind::Qe => ProjectionContext::for_qe(self.net, &QePoint::from_vec(x.to_vec())),
            ManifoldKind::Bfm => ProjectionContext::for_bfm(self.net, &BfmPoint::from_vec(x.to_vec())),
        }
    }

    pub fn gradient(&self, ctx: &ProjectionContext, x: &[f64]) -> TangentVector {
        match self.manifold {
            ManifoldKind::Qe => grad_qe_with(ctx, &self.sys, &QePoint::from_vec(x.to_vec())),
            ManifoldKind::Bfm => grad_bfm_with(ctx, self.net, &BfmPoint::from_vec(x.to_vec())),
        }
    }

    pub fn retract(&self, target: &[f64]) -> Result<Vec<f64>> {
        retract(self.retraction, self.net, target)
    }

    pub fn voltages<'x>(&self, x: &'x [f64]) -> &'x [f64] {
        let j = self.net.j();
        &x[3 * j..4 * j]
    }

    pub fn report(
        &self,
        x: &[f64],
        converged: bool,
        init: (f64, f64),
        trajectory: Vec<IterRecord>,
        failure: Option<LfError>,
    ) -> SolveReport {
        let j = self.net.j();
        SolveReport {
            converged,
            iterations: trajectory.len(),
            initial_f: init.0,
            initial_grad_norm: init.1,
            trajectory,
            solution: QePoint::from_vec(x[..4 * j].to_vec()),
            injections: (self.manifold == ManifoldKind::Bfm).then(|| x[4 * j..].to_vec()),
            angles: None,
            failure,
        }
    }
}

/// What a method does at one iterate: produce the next point and its step.
pub(crate) enum Step {
    Accepted { point: Vec<f64>, f: f64, step: f64 },
    Failed(LfError),
}

/// Shared outer loop. `step` receives the current point, its objective,
/// projection context and gradient.
pub(crate) fn run_iterations<S>(
    prob: &Problem<'_>,
    x0: Vec<f64>,
    cfg: &SolverConfig,
    diverge_after: Option<usize>,
    mut step: S,
) -> SolveReport
where
    S: FnMut(&[f64], f64, &ProjectionContext, &TangentVector) -> Step,
{
    let start = Instant::now();
    let mut x = x0;
    let mut f = prob.objective(&x);
    let mut ctx = match prob.context(&x) {
        Ok(c) => c,
        Err(e) => return prob.report(&x, false, (f, f64::NAN), Vec::new(), Some(e)),
    };
    let mut grad = prob.gradient(&ctx, &x);
    let init = (f, grad.norm());
    if grad.norm() <= cfg.eps_grad {
        return prob.report(&x, true, init, Vec::new(), None);
    }
    let mut trajectory = Vec::new();
    let mut growth = 0usize;
    for iter in 1..=cfg.max_iter {
        let (next, f_next, alpha) = match step(&x, f, &ctx, &grad) {
            Step::Accepted { point, f, step } => (point, f, step),
            Step::Failed(e) => return prob.report(&x, false, init, trajectory, Some(e)),
        };
        let dv = max_voltage_change(prob.voltages(&x), prob.voltages(&next));
        let next_ctx = match prob.context(&next) {
            Ok(c) => c,
            Err(e) => return prob.report(&next, false, init, trajectory, Some(e)),
        };
        let next_grad = prob.gradient(&next_ctx, &next);
        trajectory.push(IterRecord {
            iter,
            f: f_next,
            grad_norm: next_grad.norm(),
            max_dv: dv,
            step: alpha,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        growth = if f_next > f { growth + 1 } else { 0 };
        let done = next_grad.norm() <= cfg.eps_grad && dv <= cfg.eps_volt;
        x = next;
        f = f_next;
        ctx = next_ctx;
        grad = next_grad;
        if done {
            return prob.report(&x, true, init, trajectory, None);
        }
        if let Some(limit) = diverge_after {
            if growth >= limit {
                let e = LfError::Diverged(format!("objective grew for {limit} consecutive iterations"));
                return prob.report(&x, false, init, trajectory, Some(e));
            }
        }
        if !f.is_finite() {
            let e = LfError::Diverged("objective is not finite".into());
            return prob.report(&x, false, init, trajectory, Some(e));
        }
    }
    prob.report(
        &x,
        false,
        init,
        trajectory,
        Some(LfError::MaxIterExceeded(cfg.max_iter)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{bfm_residual, qe_residual};
    use crate::network::tests::{path_network, two_bus};

    #[test]
    fn flat_and_warm_two_bus() {
        let net = two_bus();
        assert_eq!(init_flat(&net, ManifoldKind::Qe).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        let w = init_warm(&net, ManifoldKind::Qe).unwrap();
        let expect = [0.1, 0.05, 0.0125, 0.97];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let xb = init_flat(&net, ManifoldKind::Bfm).unwrap();
        assert!(linalg::norm_inf(&bfm_residual(&net, &BfmPoint::from_vec(xb))) < 1e-15);
    }

    #[test]
    fn zero_load_warm_equals_flat() {
        let net = path_network(5, 0.0, 0.0);
        for m in [ManifoldKind::Qe, ManifoldKind::Bfm] {
            let a = init_flat(&net, m).unwrap();
            let b = init_warm(&net, m).unwrap();
            assert!(linalg::norm_inf(&linalg::sub(&a, &b)) < 1e-15);
        }
    }

    #[test]
    fn flat_case33bw_objective_is_load_mismatch() {
        let net = crate::cases::load("case33bw").unwrap();
        let u = QePoint::from_vec(init_flat(&net, ManifoldKind::Qe).unwrap());
        assert!(linalg::norm_inf(&qe_residual(&net, &u)) < 1e-15);
        let sys = crate::manifold::linear_part(&net).unwrap();
        let expect: f64 = net.p_inj().iter().chain(net.q_inj()).map(|x| x * x).sum();
        assert!((objective_qe(&sys, &u) - expect).abs() < 1e-15);
    }

    #[test]
    fn stop_check_cases() {
        let cfg = SolverConfig::default();
        let v = [1.0, 0.98];
        assert!(stop_check(&v, &v, 0.0, &cfg));
        assert!(!stop_check(&v, &[1.0, 0.97], 1e-9, &cfg));
        let moved = [1.0, (0.98f64.sqrt() + 1.1e-6).powi(2)];
        assert!(!stop_check(&v, &moved, 1.1e-6, &cfg));
    }

    #[test]
    fn armijo_backtracks_on_long_steps() {
        // f(x) = x², gradient 2x, identity retraction
        let f = |x: &[f64]| x[0] * x[0];
        let r = |x: &[f64]| Ok(x.to_vec());
        let cfg = ArmijoConfig::default();
        let x = [1.0];
        let g = [2.0];
        let s = armijo(f, r, &x, 1.0, &[-1e-6], &g, 1.0, &cfg).unwrap();
        assert_eq!(s.m, 0);
        let s = armijo(f, r, &x, 1.0, &[-2e6], &g, 1.0, &cfg).unwrap();
        assert!(s.m > 0);
        assert!(s.f < 1.0);
        // retraction failures count as rejections
        let failing = |x: &[f64]| {
            if x[0] < 0.5 {
                Err(LfError::NonPositiveVoltage { line: 1, value: x[0] })
            } else {
                Ok(x.to_vec())
            }
        };
        let s = armijo(f, failing, &x, 1.0, &[-1.0], &g, 1.0, &cfg).unwrap();
        assert!(s.point[0] >= 0.5 && s.m > 0);
        let err = armijo(
            f,
            |_: &[f64]| Err(LfError::Diverged(String::new())),
            &x,
            1.0,
            &[-1.0],
            &g,
            1.0,
            &cfg,
        );
        assert!(matches!(err, Err(LfError::LineSearchFailed { backtracks: 50 })));
    }

    #[test]
    fn config_validation_and_retraction_compatibility() {
        let mut cfg = SolverConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.retraction_for(ManifoldKind::Bfm).unwrap(), RetractionKind::BfmSweep);
        assert_eq!(cfg.retraction_for(ManifoldKind::Qe).unwrap(), RetractionKind::QeCurrent);
        cfg.retraction = Some(RetractionKind::QeSphere);
        assert!(cfg.retraction_for(ManifoldKind::Bfm).is_err());
        cfg.armijo.beta = 1.0;
        assert!(cfg.validate().is_err());
    }
}
