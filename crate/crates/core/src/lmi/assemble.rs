//! Assembly of the dissipation LMIs used by the gain and reachability
//! analyses. The gain inequality carries a `1/gamma` weight on the output;
//! it is emitted in Schur-complement form with the output block moved to the
//! border so that everything stays affine in `(P, M, X, gamma, mu)` for a
//! fixed decay rate.

use crate::error::{Error, Result};
use crate::iqc::{MultiplierClass, MultiplierVars};
use crate::linalg::{eye, hstack, zeros, Mat};
use crate::system::AugmentedPlant;

use super::expr::{AffineExpr, MatrixVariable, Term};
use super::program::{Sense, SdpProgram};

/// Strictness margin used for the strict inequalities of the reachability
/// conditions.
pub const STRICT_MARGIN: f64 = 1e-7;
/// Lower bound on `gamma` that keeps the Schur complement valid.
pub const GAMMA_FLOOR: f64 = 1e-9;

/// `e ⊗ C` for a 1x1 expression built from scalar variables and constants.
pub fn scalar_expr_times(e: &AffineExpr, c: &Mat) -> Result<AffineExpr> {
    if e.shape() != (1, 1) {
        return Err(Error::ShapeMismatch("expected a scalar expression".into()));
    }
    let mut out = AffineExpr::constant(c * e.constant[(0, 0)]);
    for t in &e.terms {
        match t {
            Term::Scalar { var, coef } => out.terms.push(Term::Scalar { var: *var, coef: c * coef[(0, 0)] }),
            Term::Matrix { .. } => {
                return Err(Error::ShapeMismatch("matrix variable inside a scalar expression".into()))
            }
        }
    }
    Ok(out)
}

/// Row blocks of the outer factors, all with columns `(chi, p, w)`.
pub(crate) struct OuterRows {
    pub current: Mat,
    pub next: Mat,
    pub next_psi: Mat,
    pub filter_out: Mat,
    pub perf: Mat,
    pub dist: Mat,
}

pub(crate) fn outer_rows(aug: &AugmentedPlant) -> OuterRows {
    let (nchi, np, nw) = (aug.nchi(), aug.np(), aug.nw());
    let current = hstack(&[&eye(nchi), &zeros(nchi, np), &zeros(nchi, nw)]);
    let next = hstack(&[&aug.a, &aug.bp, &aug.bw]);
    let psi = aug.psi_range();
    let next_psi = next.rows(psi.start, psi.len()).into_owned();
    let filter_out = hstack(&[&aug.cs, &aug.dsp, &aug.dsw]);
    let perf = hstack(&[&aug.cz, &aug.dzp, &aug.dzw]);
    let dist = hstack(&[&zeros(nw, nchi), &zeros(nw, np), &eye(nw)]);
    OuterRows { current, next, next_psi, filter_out, perf, dist }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("decay rate must lie in (0, 1), got {rho}")));
    }
    Ok(())
}

fn check_multiplier(aug: &AugmentedPlant, m: &AffineExpr) -> Result<()> {
    if m.shape() != (aug.ns(), aug.ns()) {
        return Err(Error::ShapeMismatch(format!(
            "multiplier is {}x{}, filter output has dimension {}",
            m.nrows(),
            m.ncols(),
            aug.ns()
        )));
    }
    Ok(())
}

/// Left-hand side of the dissipation inequality
/// `(·)^T diag(-rho P, P, M, -mu I) [I 0 0; A Bp Bw; Cs Dsp Dsw; 0 0 I] ⪯ 0`.
pub fn dissipation_expr(aug: &AugmentedPlant, p: &AffineExpr, m: &AffineExpr, mu: &AffineExpr, rho: f64) -> Result<AffineExpr> {
    check_rho(rho)?;
    check_multiplier(aug, m)?;
    let f = outer_rows(aug);
    let mu_i = scalar_expr_times(mu, &eye(aug.nw()))?;
    Ok((p.clone() * -rho).congruence(&f.current)?
        + p.congruence(&f.next)?
        + m.congruence(&f.filter_out)?
        - mu_i.congruence(&f.dist)?)
}

/// Declares `P` and `mu >= 0` and adds the first dissipation inequality.
pub fn build_dissipation(
    prog: &mut SdpProgram,
    aug: &AugmentedPlant,
    multiplier: &MultiplierVars,
    rho: f64,
) -> Result<(MatrixVariable, MatrixVariable)> {
    let p = prog.declare_symmetric("P", aug.nchi())?;
    let mu = prog.declare_scalar("mu")?;
    prog.add_constraint("mu_nonneg", AffineExpr::var(&mu), Sense::PosSemidef)?;
    let e = dissipation_expr(aug, &AffineExpr::var(&p), &multiplier.m, &AffineExpr::var(&mu), rho)?;
    prog.add_constraint("dissipation", e, Sense::NegSemidef)?;
    Ok((p, mu))
}

fn schur_border(aug: &AugmentedPlant, s: AffineExpr, gamma: &AffineExpr, rho: f64) -> Result<AffineExpr> {
    let f = outer_rows(aug);
    let nz = aug.nz();
    let corner = scalar_expr_times(gamma, &(eye(nz) * (-(1.0 - rho) / rho)))?;
    AffineExpr::blocks(&[
        vec![Some(s), Some(AffineExpr::constant(f.perf.transpose()))],
        vec![Some(AffineExpr::constant(f.perf.clone())), Some(corner)],
    ])
}

fn supply_term(aug: &AugmentedPlant, gamma: &AffineExpr, mu: &AffineExpr, rho: f64) -> Result<AffineExpr> {
    let f = outer_rows(aug);
    let gap = (gamma.clone() - mu.clone()) * (rho / (1.0 - rho));
    scalar_expr_times(&gap, &eye(aug.nw()))?.congruence(&f.dist)
}

/// Schur form of the output inequality with terminal cost `X` on the filter
/// state: `[[S, Z^T], [Z, -(gamma (1-rho)/rho) I]] ⪯ 0` where `S` collects the
/// `-rho P`, `X`, `M` and supply-rate terms and `Z = [Cz Dzp Dzw]`.
pub fn output_schur_expr(
    aug: &AugmentedPlant,
    p: &AffineExpr,
    x: &AffineExpr,
    m: &AffineExpr,
    gamma: &AffineExpr,
    mu: &AffineExpr,
    rho: f64,
) -> Result<AffineExpr> {
    check_rho(rho)?;
    check_multiplier(aug, m)?;
    if x.shape() != (aug.npsi(), aug.npsi()) {
        return Err(Error::ShapeMismatch(format!(
            "terminal cost is {}x{}, filter state has dimension {}",
            x.nrows(),
            x.ncols(),
            aug.npsi()
        )));
    }
    let f = outer_rows(aug);
    let s = (p.clone() * -rho).congruence(&f.current)?
        + x.congruence(&f.next_psi)?
        + m.congruence(&f.filter_out)?
        - supply_term(aug, gamma, mu, rho)?;
    schur_border(aug, s, gamma, rho)
}

/// Same as [`output_schur_expr`] without terminal cost and without the
/// state-update row, using an independent multiplier `M2`.
pub fn pointwise_output_schur_expr(
    aug: &AugmentedPlant,
    p: &AffineExpr,
    m2: &AffineExpr,
    gamma: &AffineExpr,
    mu: &AffineExpr,
    rho: f64,
) -> Result<AffineExpr> {
    check_rho(rho)?;
    check_multiplier(aug, m2)?;
    let f = outer_rows(aug);
    let s = (p.clone() * -rho).congruence(&f.current)? + m2.congruence(&f.filter_out)?
        - supply_term(aug, gamma, mu, rho)?;
    schur_border(aug, s, gamma, rho)
}

pub fn build_output_schur(
    prog: &mut SdpProgram,
    aug: &AugmentedPlant,
    multiplier: &MultiplierVars,
    rho: f64,
    p: &MatrixVariable,
    gamma: &MatrixVariable,
    mu: &MatrixVariable,
) -> Result<()> {
    let e = output_schur_expr(
        aug,
        &AffineExpr::var(p),
        &multiplier.x,
        &multiplier.m,
        &AffineExpr::var(gamma),
        &AffineExpr::var(mu),
        rho,
    )?;
    prog.add_constraint("output", e, Sense::NegSemidef)
}

pub fn build_pointwise_output_schur(
    prog: &mut SdpProgram,
    aug: &AugmentedPlant,
    class: &MultiplierClass,
    multiplier2: &MultiplierVars,
    rho: f64,
    p: &MatrixVariable,
    gamma: &MatrixVariable,
    mu: &MatrixVariable,
) -> Result<()> {
    if !class.pointwise() {
        return Err(Error::PointwiseRequired);
    }
    let e = pointwise_output_schur_expr(
        aug,
        &AffineExpr::var(p),
        &multiplier2.m,
        &AffineExpr::var(gamma),
        &AffineExpr::var(mu),
        rho,
    )?;
    prog.add_constraint("pointwise_output", e, Sense::NegSemidef)
}

/// How the ellipsoid shape enters the reachability program.
#[derive(Clone, Debug)]
pub enum ShapeMode {
    /// `Q = tau * Q0` with `Q0` fixed; maximises `tau`.
    FixedShape(Mat),
    /// Free `Q`; maximises `log det Q`.
    MaximizeVolume,
}

/// Handles into a reachability program.
#[derive(Clone, Debug)]
pub struct ReachProgram {
    pub program: SdpProgram,
    pub p: MatrixVariable,
    pub q: AffineExpr,
    pub multiplier: MultiplierVars,
    pub tau: Option<MatrixVariable>,
}

/// Invariant-ellipsoid conditions: the dissipation inequality with
/// `mu = 1 - rho`, `Q ⪰ εI` and `P - diag(X, Q) ⪰ εI`.
pub fn build_reach_program(aug: &AugmentedPlant, class: &MultiplierClass, rho: f64, mode: &ShapeMode) -> Result<ReachProgram> {
    check_rho(rho)?;
    let mut prog = SdpProgram::new();
    prog.rho = Some(rho);
    let multiplier = class.instantiate(&mut prog, rho, "")?;
    let p = prog.declare_symmetric("P", aug.nchi())?;
    let mu = AffineExpr::constant(Mat::from_element(1, 1, 1.0 - rho));
    let e = dissipation_expr(aug, &AffineExpr::var(&p), &multiplier.m, &mu, rho)?;
    prog.add_constraint("dissipation", e, Sense::NegSemidef)?;

    let nx = aug.nx();
    let (q, tau) = match mode {
        ShapeMode::FixedShape(q0) => {
            if q0.shape() != (nx, nx) {
                return Err(Error::DimensionMismatch { block: "Q0".into(), expected: (nx, nx), found: q0.shape() });
            }
            let tau = prog.declare_scalar("tau")?;
            prog.minimize(-AffineExpr::var(&tau))?;
            (AffineExpr::scalar_times(&tau, q0.clone()), Some(tau))
        }
        ShapeMode::MaximizeVolume => {
            let qv = prog.declare_symmetric("Q", nx)?;
            let q = AffineExpr::var(&qv);
            add_log_det_objective(&mut prog, &q)?;
            (q, None)
        }
    };
    let margin = AffineExpr::constant(eye(nx) * STRICT_MARGIN);
    prog.add_constraint("q_pos", q.clone() - margin, Sense::PosSemidef)?;
    let diag = AffineExpr::block_diag(&[multiplier.x.clone(), q.clone()]);
    let margin = AffineExpr::constant(eye(aug.nchi()) * STRICT_MARGIN);
    prog.add_constraint("p_dominates", AffineExpr::var(&p) - diag - margin, Sense::PosSemidef)?;
    Ok(ReachProgram { program: prog, p, q, multiplier, tau })
}

/// Maximises `log det Q` through a lower-triangular factor `L` with
/// `[[Q, L], [L^T, diag(L)]] ⪰ 0` and `exp(t_i) <= L_ii`.
fn add_log_det_objective(prog: &mut SdpProgram, q: &AffineExpr) -> Result<()> {
    let n = q.nrows();
    let mut l = AffineExpr::zeros(n, n);
    let mut diag = AffineExpr::zeros(n, n);
    let mut objective = AffineExpr::zeros(1, 1);
    for j in 0..n {
        for i in j..n {
            let v = prog.declare_scalar(&format!("L[{i},{j}]"))?;
            let mut e = zeros(n, n);
            e[(i, j)] = 1.0;
            l = l + AffineExpr::scalar_times(&v, e.clone());
            if i == j {
                diag = diag + AffineExpr::scalar_times(&v, e);
                let t = prog.declare_log_scalar(&format!("t[{i}]"))?;
                prog.add_exp_cone(&format!("logdiag[{i}]"), AffineExpr::var(&t), AffineExpr::var(&v))?;
                objective = objective - AffineExpr::var(&t);
            }
        }
    }
    let lt = l.transpose();
    let block = AffineExpr::blocks(&[vec![Some(q.clone()), Some(l)], vec![Some(lt), Some(diag)]])?;
    prog.add_constraint("logdet_factor", block, Sense::PosSemidef)?;
    prog.minimize(objective)
}
