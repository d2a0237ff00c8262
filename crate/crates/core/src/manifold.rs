//! Branch flow (BFM) and quadratic-equality (QE) manifolds.
//!
//! Points are stacked vectors. With `J` lines, a QE point is
//! `u = (P, Q, l, v)` of length `4J`; a BFM point appends the injection
//! variables, `x = (u, p, q)` of length `6J`. `v[k]` is the squared voltage
//! of node `k + 1`, the downstream node of line `k`.
//!
//! Both manifolds are the zero sets of maps `h`. Tangent projections use a
//! sparse Cholesky factorization of the Gram matrix `Dh Dhᵀ`.

use crate::error::{LfError, Result};
use crate::linalg::{self, CscMatrix, SparseCholesky, Triplets};
use crate::network::RadialNetwork;

/// Offsets of the variable blocks inside a stacked point.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub j: usize,
}

impl Layout {
    pub fn p(&self, k: usize) -> usize {
        k
    }
    pub fn q(&self, k: usize) -> usize {
        self.j + k
    }
    pub fn l(&self, k: usize) -> usize {
        2 * self.j + k
    }
    pub fn v(&self, k: usize) -> usize {
        3 * self.j + k
    }
    pub fn inj_p(&self, k: usize) -> usize {
        4 * self.j + k
    }
    pub fn inj_q(&self, k: usize) -> usize {
        5 * self.j + k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    Bfm,
    Qe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QePoint {
    u: Vec<f64>,
}

impl QePoint {
    pub fn from_vec(u: Vec<f64>) -> Self {
        assert_eq!(u.len() % 4, 0, "QE point length must be a multiple of 4");
        Self { u }
    }

    pub fn from_parts(p: &[f64], q: &[f64], l: &[f64], v: &[f64]) -> Self {
        let u = [p, q, l, v].concat();
        Self::from_vec(u)
    }

    pub fn j(&self) -> usize {
        self.u.len() / 4
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.u
    }

    fn block(&self, b: usize) -> &[f64] {
        let j = self.j();
        &self.u[b * j..(b + 1) * j]
    }

    pub fn flow_p(&self) -> &[f64] {
        self.block(0)
    }
    pub fn flow_q(&self) -> &[f64] {
        self.block(1)
    }
    pub fn current(&self) -> &[f64] {
        self.block(2)
    }
    pub fn voltage(&self) -> &[f64] {
        self.block(3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfmPoint {
    x: Vec<f64>,
}

impl BfmPoint {
    pub fn from_vec(x: Vec<f64>) -> Self {
        assert_eq!(x.len() % 6, 0, "BFM point length must be a multiple of 6");
        Self { x }
    }

    pub fn from_parts(u: &QePoint, p: &[f64], q: &[f64]) -> Self {
        Self::from_vec([u.as_slice(), p, q].concat())
    }

    pub fn j(&self) -> usize {
        self.x.len() / 6
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.x
    }

    /// The `u = (P, Q, l, v)` part.
    pub fn qe_part(&self) -> QePoint {
        QePoint::from_vec(self.x[..4 * self.j()].to_vec())
    }

    /// The injection part `w = (p, q)`.
    pub fn w(&self) -> &[f64] {
        &self.x[4 * self.j()..]
    }

    fn block(&self, b: usize) -> &[f64] {
        let j = self.j();
        &self.x[b * j..(b + 1) * j]
    }

    pub fn flow_p(&self) -> &[f64] {
        self.block(0)
    }
    pub fn flow_q(&self) -> &[f64] {
        self.block(1)
    }
    pub fn current(&self) -> &[f64] {
        self.block(2)
    }
    pub fn voltage(&self) -> &[f64] {
        self.block(3)
    }
    pub fn inj_p(&self) -> &[f64] {
        self.block(4)
    }
    pub fn inj_q(&self) -> &[f64] {
        self.block(5)
    }
}

/// A direction tagged with the manifold whose tangent space it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub kind: ManifoldKind,
    pub data: Vec<f64>,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        linalg::norm2(&self.data)
    }
}

/// Compact linear part `A u = b` of the branch flow equations with the
/// injections fixed at their known values.
#[derive(Debug, Clone)]
pub struct FlowLinearSystem {
    pub a: CscMatrix,
    pub at: CscMatrix,
    pub b: Vec<f64>,
}

impl FlowLinearSystem {
    /// `A u - b`
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        linalg::sub(&self.a.mul_vec(u), &self.b)
    }
}

/// Squared voltage of the upstream node of line `k`.
pub(crate) fn upstream_v(net: &RadialNetwork, v: &[f64], k: usize) -> f64 {
    match net.line(k).parent_line() {
        Some(p) => v[p],
        None => net.v0(),
    }
}

fn push_linear_rows(net: &RadialNetwork, t: &mut Triplets) {
    let lay = Layout { j: net.j() };
    let j = net.j();
    for (k, line) in net.lines().iter().enumerate() {
        let a2 = line.tap * line.tap;
        let (g, bs) = (net.shunt_g()[k], net.shunt_b()[k]);
        // real balance at node k + 1
        for &c in net.topo().children_of_line(k) {
            t.push(k, lay.p(c), 1.0);
            t.push(j + k, lay.q(c), 1.0);
        }
        t.push(k, lay.p(k), -1.0);
        t.push(k, lay.l(k), a2 * line.r);
        t.push(k, lay.v(k), g);
        // reactive balance
        t.push(j + k, lay.q(k), -1.0);
        t.push(j + k, lay.l(k), a2 * line.x);
        t.push(j + k, lay.v(k), -bs);
        // voltage drop
        let row = 2 * j + k;
        t.push(row, lay.v(k), 1.0);
        if let Some(pk) = line.parent_line() {
            t.push(row, lay.v(pk), -1.0 / a2);
        }
        t.push(row, lay.p(k), 2.0 * line.r);
        t.push(row, lay.q(k), 2.0 * line.x);
        t.push(row, lay.l(k), -a2 * line.z2());
    }
}

/// Assemble `A` (3J × 4J) and `b`.
pub fn linear_part(net: &RadialNetwork) -> Result<FlowLinearSystem> {
    let j = net.j();
    let mut t = Triplets::with_capacity(3 * j, 4 * j, 10 * j);
    push_linear_rows(net, &mut t);
    let a = t.to_csc();
    let mut b = Vec::with_capacity(3 * j);
    b.extend_from_slice(net.p_inj());
    b.extend_from_slice(net.q_inj());
    b.extend(net.lines().iter().map(|line| match line.parent_line() {
        None => net.v0() / (line.tap * line.tap),
        Some(_) => 0.0,
    }));
    SparseCholesky::factor(&a.gram()).map_err(|_| LfError::RankDeficient("A Aᵀ is not positive definite".into()))?;
    let at = a.transpose();
    Ok(FlowLinearSystem { a, at, b })
}

/// `P² + Q² − v_i l` for every line.
pub fn qe_residual(net: &RadialNetwork, u: &QePoint) -> Vec<f64> {
    assert_eq!(u.j(), net.j());
    let (p, q, l, v) = (u.flow_p(), u.flow_q(), u.current(), u.voltage());
    (0..net.j())
        .map(|k| p[k] * p[k] + q[k] * q[k] - upstream_v(net, v, k) * l[k])
        .collect()
}

/// Residuals of the real balance, reactive balance, voltage drop and
/// current families, stacked in that order.
pub fn bfm_residual(net: &RadialNetwork, x: &BfmPoint) -> Vec<f64> {
    assert_eq!(x.j(), net.j());
    let j = net.j();
    let (p, q, l, v) = (x.flow_p(), x.flow_q(), x.current(), x.voltage());
    let (pi, qi) = (x.inj_p(), x.inj_q());
    let mut out = vec![0.0; 4 * j];
    for (k, line) in net.lines().iter().enumerate() {
        let a2 = line.tap * line.tap;
        let children = net.topo().children_of_line(k);
        let sp: f64 = children.iter().map(|&c| p[c]).sum();
        let sq: f64 = children.iter().map(|&c| q[c]).sum();
        let vi = upstream_v(net, v, k);
        out[k] = sp - p[k] + a2 * line.r * l[k] + net.shunt_g()[k] * v[k] - pi[k];
        out[j + k] = sq - q[k] + a2 * line.x * l[k] - net.shunt_b()[k] * v[k] - qi[k];
        out[2 * j + k] = v[k] - vi / a2 + 2.0 * (line.r * p[k] + line.x * q[k]) - a2 * line.z2() * l[k];
        out[3 * j + k] = p[k] * p[k] + q[k] * q[k] - vi * l[k];
    }
    out
}

/// Rows of the current-family differential, placed at `row_offset`, for a
/// point `u` whose upstream slack value is `v_slack`. With `v_slack = 0`
/// this is the directional derivative of the differential itself.
fn push_qe_rows(net: &RadialNetwork, u: &[f64], v_slack: f64, row_offset: usize, t: &mut Triplets) {
    let j = net.j();
    let lay = Layout { j };
    for (k, line) in net.lines().iter().enumerate() {
        let row = row_offset + k;
        t.push(row, lay.p(k), 2.0 * u[lay.p(k)]);
        t.push(row, lay.q(k), 2.0 * u[lay.q(k)]);
        match line.parent_line() {
            Some(pk) => {
                t.push(row, lay.l(k), -u[lay.v(pk)]);
                t.push(row, lay.v(pk), -u[lay.l(k)]);
            }
            None => t.push(row, lay.l(k), -v_slack),
        }
    }
}

/// Differential of the current family, J × 4J.
pub fn qe_differential(net: &RadialNetwork, u: &QePoint) -> CscMatrix {
    assert_eq!(u.j(), net.j());
    let j = net.j();
    let mut t = Triplets::with_capacity(j, 4 * j, 4 * j);
    push_qe_rows(net, u.as_slice(), net.v0(), 0, &mut t);
    t.to_csc()
}

/// Differential of the full branch flow map, 4J × 6J.
pub fn bfm_differential(net: &RadialNetwork, x: &BfmPoint) -> CscMatrix {
    assert_eq!(x.j(), net.j());
    let j = net.j();
    let lay = Layout { j };
    let mut t = Triplets::with_capacity(4 * j, 6 * j, 16 * j);
    push_linear_rows(net, &mut t);
    for k in 0..j {
        t.push(k, lay.inj_p(k), -1.0);
        t.push(j + k, lay.inj_q(k), -1.0);
    }
    push_qe_rows(net, x.as_slice(), net.v0(), 3 * j, &mut t);
    t.to_csc()
}

/// Orthogonal projection onto the null space of a full-row-rank `Dh`.
#[derive(Debug)]
pub struct ProjectionContext {
    dh: CscMatrix,
    dht: CscMatrix,
    gram: SparseCholesky,
}

impl ProjectionContext {
    pub fn new(dh: CscMatrix) -> Result<Self> {
        let gram = SparseCholesky::factor(&dh.gram())
            .map_err(|_| LfError::RankDeficient("Gram matrix of the differential is singular".into()))?;
        let dht = dh.transpose();
        Ok(Self { dh, dht, gram })
    }

    pub fn for_qe(net: &RadialNetwork, u: &QePoint) -> Result<Self> {
        Self::new(qe_differential(net, u))
    }

    pub fn for_bfm(net: &RadialNetwork, x: &BfmPoint) -> Result<Self> {
        Self::new(bfm_differential(net, x))
    }

    pub fn differential(&self) -> &CscMatrix {
        &self.dh
    }

    /// `(Dh Dhᵀ)⁻¹ Dh y`, the normal-space coefficients of `y`.
    pub fn multipliers(&self, y: &[f64]) -> Vec<f64> {
        self.gram.solve(&self.dh.mul_vec(y))
    }

    /// `y − Dhᵀ (Dh Dhᵀ)⁻¹ Dh y`
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let lambda = self.multipliers(y);
        linalg::sub(y, &self.dht.mul_vec(&lambda))
    }

    pub fn project_tangent(&self, kind: ManifoldKind, y: &[f64]) -> TangentVector {
        TangentVector {
            kind,
            data: self.project(y),
        }
    }

    /// `‖Dh ξ‖∞`
    pub fn tangent_defect(&self, xi: &[f64]) -> f64 {
        linalg::norm_inf(&self.dh.mul_vec(xi))
    }
}

/// Known injections `w̄ = (p̄, q̄)`.
pub fn injection_target(net: &RadialNetwork) -> Vec<f64> {
    [net.p_inj(), net.q_inj()].concat()
}

/// `‖w − w̄‖²`
pub fn objective_bfm(x: &BfmPoint, w_bar: &[f64]) -> f64 {
    x.w().iter().zip(w_bar).map(|(w, t)| (w - t) * (w - t)).sum()
}

/// `‖A u − b‖²`
pub fn objective_qe(sys: &FlowLinearSystem, u: &QePoint) -> f64 {
    let r = sys.residual(u.as_slice());
    linalg::dot(&r, &r)
}

fn euclid_grad_bfm(net: &RadialNetwork, x: &BfmPoint) -> Vec<f64> {
    let j = net.j();
    let mut g = vec![0.0; 6 * j];
    let w_bar = injection_target(net);
    for (i, (w, t)) in x.w().iter().zip(&w_bar).enumerate() {
        g[4 * j + i] = 2.0 * (w - t);
    }
    g
}

fn euclid_grad_qe(sys: &FlowLinearSystem, u: &QePoint) -> Vec<f64> {
    linalg::scale(&sys.at.mul_vec(&sys.residual(u.as_slice())), 2.0)
}

pub fn grad_bfm_with(ctx: &ProjectionContext, net: &RadialNetwork, x: &BfmPoint) -> TangentVector {
    ctx.project_tangent(ManifoldKind::Bfm, &euclid_grad_bfm(net, x))
}

pub fn grad_qe_with(ctx: &ProjectionContext, sys: &FlowLinearSystem, u: &QePoint) -> TangentVector {
    ctx.project_tangent(ManifoldKind::Qe, &euclid_grad_qe(sys, u))
}

/// Riemannian gradient of `f_BFM`: `2 Π (0; w − w̄)`.
pub fn grad_bfm(net: &RadialNetwork, x: &BfmPoint) -> Result<TangentVector> {
    let ctx = ProjectionContext::for_bfm(net, x)?;
    Ok(grad_bfm_with(&ctx, net, x))
}

/// Riemannian gradient of `f_QE`: `2 Π Aᵀ(A u − b)`.
pub fn grad_qe(sys: &FlowLinearSystem, net: &RadialNetwork, u: &QePoint) -> Result<TangentVector> {
    let ctx = ProjectionContext::for_qe(net, u)?;
    Ok(grad_qe_with(&ctx, sys, u))
}

/// `J'(ζ)ᵀ λ` for the current-family rows, where `J'(ζ)` is the derivative
/// of the differential along `ζ`. Only the first `4J` entries of `zeta` are
/// read; the output has the length of `zeta`.
fn current_rows_derivative_t(net: &RadialNetwork, zeta: &[f64], lambda: &[f64]) -> Vec<f64> {
    let lay = Layout { j: net.j() };
    let mut out = vec![0.0; zeta.len()];
    for (k, line) in net.lines().iter().enumerate() {
        let lam = lambda[k];
        out[lay.p(k)] += 2.0 * zeta[lay.p(k)] * lam;
        out[lay.q(k)] += 2.0 * zeta[lay.q(k)] * lam;
        if let Some(pk) = line.parent_line() {
            out[lay.l(k)] -= zeta[lay.v(pk)] * lam;
            out[lay.v(pk)] -= zeta[lay.l(k)] * lam;
        }
    }
    out
}

/// Riemannian Hessian of `f_QE` at `u` applied to a tangent `ζ`:
/// `Π (2 AᵀA ζ − J'(ζ)ᵀ λ)` with `λ = (J Jᵀ)⁻¹ J · 2Aᵀ(Au − b)`.
/// The second term is `Π DΠ[ζ] grad`, the projector-derivative part.
pub fn hess_qe_apply_with(
    ctx: &ProjectionContext,
    sys: &FlowLinearSystem,
    net: &RadialNetwork,
    u: &QePoint,
    zeta: &[f64],
) -> TangentVector {
    let g = euclid_grad_qe(sys, u);
    let lambda = ctx.multipliers(&g);
    let ata = linalg::scale(&sys.at.mul_vec(&sys.a.mul_vec(zeta)), 2.0);
    let curv = current_rows_derivative_t(net, zeta, &lambda);
    ctx.project_tangent(ManifoldKind::Qe, &linalg::sub(&ata, &curv))
}

pub fn hess_qe_apply(
    sys: &FlowLinearSystem,
    net: &RadialNetwork,
    u: &QePoint,
    zeta: &TangentVector,
) -> Result<TangentVector> {
    if zeta.kind != ManifoldKind::Qe {
        return Err(LfError::InvalidConfig("QE Hessian applied to a BFM direction".into()));
    }
    let ctx = ProjectionContext::for_qe(net, u)?;
    Ok(hess_qe_apply_with(&ctx, sys, net, u, &zeta.data))
}

/// Riemannian Hessian of `f_BFM` applied to a tangent `ξ`. Only the current
/// family has a non-constant differential, so the curvature term involves
/// the last `J` multipliers. Provided for verification; no solver uses it.
pub fn hess_bfm_apply(net: &RadialNetwork, x: &BfmPoint, xi: &TangentVector) -> Result<TangentVector> {
    if xi.kind != ManifoldKind::Bfm {
        return Err(LfError::InvalidConfig("BFM Hessian applied to a QE direction".into()));
    }
    let j = net.j();
    let ctx = ProjectionContext::for_bfm(net, x)?;
    let g = euclid_grad_bfm(net, x);
    let lambda = ctx.multipliers(&g);
    let mut euclid = vec![0.0; 6 * j];
    for i in 4 * j..6 * j {
        euclid[i] = 2.0 * xi.data[i];
    }
    let curv = current_rows_derivative_t(net, &xi.data, &lambda[3 * j..]);
    Ok(ctx.project_tangent(ManifoldKind::Bfm, &linalg::sub(&euclid, &curv)))
}

/// Hessian of the Lagrangian `f_QE − λᵀ h_QE` (4J × 4J) at the multipliers
/// `λ` of the gradient. Restricted to the tangent space it equals the
/// Riemannian Hessian, which makes it the (1,1) block of the Newton KKT system.
pub fn lagrangian_hessian_qe(
    ctx: &ProjectionContext,
    sys: &FlowLinearSystem,
    net: &RadialNetwork,
    u: &QePoint,
) -> CscMatrix {
    let j = net.j();
    let lay = Layout { j };
    let lambda = ctx.multipliers(&euclid_grad_qe(sys, u));
    let ata = sys.at.mul_mat(&sys.a);
    let mut t = Triplets::with_capacity(4 * j, 4 * j, ata.nnz() + 4 * j);
    for (r, c, val) in ata.entries() {
        t.push(r, c, 2.0 * val);
    }
    for (k, line) in net.lines().iter().enumerate() {
        let lam = lambda[k];
        t.push(lay.p(k), lay.p(k), -2.0 * lam);
        t.push(lay.q(k), lay.q(k), -2.0 * lam);
        if let Some(pk) = line.parent_line() {
            t.push(lay.l(k), lay.v(pk), lam);
            t.push(lay.v(pk), lay.l(k), lam);
        }
    }
    t.to_csc()
}
