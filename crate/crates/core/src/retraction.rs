//! Retractions onto the BFM and QE manifolds.
//!
//! Callers fold the step size into the target point, so each retraction
//! maps `x + αξ` straight back to the manifold.

use std::fmt;
use std::str::FromStr;

use crate::error::{LfError, Result};
use crate::linalg;
use crate::manifold::{upstream_v, BfmPoint, ManifoldKind, QePoint};
use crate::network::RadialNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RetractionKind {
    /// Forward sweep on the BFM manifold.
    BfmSweep,
    /// Per-line normalization onto the cone (QE1).
    QeSphere,
    /// Current update `l = (P² + Q²) / v_i` (QE2).
    QeCurrent,
}

impl RetractionKind {
    pub fn manifold(self) -> ManifoldKind {
        match self {
            RetractionKind::BfmSweep => ManifoldKind::Bfm,
            RetractionKind::QeSphere | RetractionKind::QeCurrent => ManifoldKind::Qe,
        }
    }
}

impl FromStr for RetractionKind {
    type Err = LfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bfm" => Ok(RetractionKind::BfmSweep),
            "qe1" => Ok(RetractionKind::QeSphere),
            "qe2" => Ok(RetractionKind::QeCurrent),
            _ => Err(LfError::InvalidConfig(format!(
                "unknown retraction `{s}` (expected bfm, qe1 or qe2)"
            ))),
        }
    }
}

impl fmt::Display for RetractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetractionKind::BfmSweep => "bfm",
            RetractionKind::QeSphere => "qe1",
            RetractionKind::QeCurrent => "qe2",
        })
    }
}

/// Keep `P̃, Q̃`, recompute `l` and `v` root to leaf, then solve the balance
/// equations for the injections.
pub fn retract_bfm(net: &RadialNetwork, target: &[f64]) -> Result<BfmPoint> {
    let j = net.j();
    if target.len() != 6 * j {
        return Err(LfError::DimensionMismatch {
            expected: 6 * j,
            got: target.len(),
        });
    }
    let (p, q) = (&target[..j], &target[j..2 * j]);
    let mut l = vec![0.0; j];
    let mut v = vec![0.0; j];
    for &k in &net.topo().forward {
        let line = net.line(k);
        let vi = upstream_v(net, &v, k);
        if !(vi > 0.0) {
            return Err(LfError::NonPositiveVoltage { line: k + 1, value: vi });
        }
        let a2 = line.tap * line.tap;
        l[k] = (p[k] * p[k] + q[k] * q[k]) / vi;
        v[k] = vi / a2 - 2.0 * (line.r * p[k] + line.x * q[k]) + a2 * line.z2() * l[k];
    }
    let mut pi = vec![0.0; j];
    let mut qi = vec![0.0; j];
    for (k, line) in net.lines().iter().enumerate() {
        let a2 = line.tap * line.tap;
        let children = net.topo().children_of_line(k);
        let sp: f64 = children.iter().map(|&c| p[c]).sum();
        let sq: f64 = children.iter().map(|&c| q[c]).sum();
        pi[k] = sp - p[k] + a2 * line.r * l[k] + net.shunt_g()[k] * v[k];
        qi[k] = sq - q[k] + a2 * line.x * l[k] - net.shunt_b()[k] * v[k];
    }
    let u = QePoint::from_parts(p, q, &l, &v);
    Ok(BfmPoint::from_parts(&u, &pi, &qi))
}

fn check_qe_len(net: &RadialNetwork, target: &[f64]) -> Result<()> {
    if target.len() != 4 * net.j() {
        return Err(LfError::DimensionMismatch {
            expected: 4 * net.j(),
            got: target.len(),
        });
    }
    Ok(())
}

/// Normalize `(2P̃, 2Q̃, l̃ − ṽ_i)` onto the cone `P² + Q² = v_i l` line by
/// line, keeping the voltages.
pub fn retract_qe_sphere(net: &RadialNetwork, target: &[f64]) -> Result<QePoint> {
    check_qe_len(net, target)?;
    let j = net.j();
    let mut u = target.to_vec();
    let v = &target[3 * j..];
    for k in 0..j {
        let (pt, qt, lt) = (target[k], target[j + k], target[2 * j + k]);
        let vi = upstream_v(net, v, k);
        let d = (4.0 * pt * pt + 4.0 * qt * qt + (lt - vi) * (lt - vi)).sqrt();
        let den = d - lt + vi;
        if !(den > 1e-12) {
            return Err(LfError::DegenerateCone {
                line: k + 1,
                denominator: den,
            });
        }
        u[2 * j + k] = (d + lt - vi) / den * vi;
        u[k] = 2.0 * pt * vi / den;
        u[j + k] = 2.0 * qt * vi / den;
    }
    Ok(QePoint::from_vec(u))
}

/// Keep `P̃, Q̃, ṽ` and set `l = (P̃² + Q̃²) / ṽ_i`.
pub fn retract_qe_current(net: &RadialNetwork, target: &[f64]) -> Result<QePoint> {
    check_qe_len(net, target)?;
    let j = net.j();
    let mut u = target.to_vec();
    let v = &target[3 * j..];
    for k in 0..j {
        let vi = upstream_v(net, v, k);
        if !(vi > 0.0) {
            return Err(LfError::NonPositiveVoltage { line: k + 1, value: vi });
        }
        u[2 * j + k] = (target[k] * target[k] + target[j + k] * target[j + k]) / vi;
    }
    Ok(QePoint::from_vec(u))
}

/// Apply a retraction to a flat target vector of the matching length.
pub fn retract(kind: RetractionKind, net: &RadialNetwork, target: &[f64]) -> Result<Vec<f64>> {
    Ok(match kind {
        RetractionKind::BfmSweep => retract_bfm(net, target)?.into_vec(),
        RetractionKind::QeSphere => retract_qe_sphere(net, target)?.into_vec(),
        RetractionKind::QeCurrent => retract_qe_current(net, target)?.into_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetractionCheck {
    /// `‖R(x) − x‖∞`
    pub centering: f64,
    /// `(h, ‖(R(x + hξ) − x)/h − ξ‖∞)` per step.
    pub rigidity: Vec<(f64, f64)>,
}

/// Numerically check the centering and local rigidity conditions at `x`
/// along the tangent `xi`.
pub fn check_retraction(
    kind: RetractionKind,
    net: &RadialNetwork,
    x: &[f64],
    xi: &[f64],
    steps: &[f64],
) -> Result<RetractionCheck> {
    let centering = linalg::norm_inf(&linalg::sub(&retract(kind, net, x)?, x));
    let rigidity = steps
        .iter()
        .map(|&h| {
            let r = retract(kind, net, &linalg::add_scaled(x, h, xi))?;
            let defect = linalg::norm_inf(&linalg::sub(&linalg::scale(&linalg::sub(&r, x), 1.0 / h), xi));
            Ok((h, defect))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RetractionCheck { centering, rigidity })
}
