//! Uncertainty classes and their multiplier sets.
//!
//! Each class yields a filter together with the decision variables and LMI
//! constraints describing admissible `(M, X)` pairs at a given decay rate:
//!
//! * time-varying polytopic parameters: static filter, pointwise multiplier;
//! * time-invariant polytopic parameters: `I ⊗ Phi` filter with terminal
//!   cost and per-vertex auxiliaries `Y^j`;
//! * norm-bounded time-varying gains: `M = eps diag(I, -I)`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{eye, hstack, kron, vstack, zeros, Mat, Vector};
use crate::lmi::{AffineExpr, SdpProgram, Sense};
use crate::system::{kron_identity_filter, static_identity_filter, BasisBlock, Filter};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UncertaintyKind {
    PolytopicTimeVarying,
    PolytopicTimeInvariant,
    NormBounded,
}

impl UncertaintyKind {
    pub fn label(self) -> &'static str {
        match self {
            UncertaintyKind::PolytopicTimeVarying => "polytopic-time-varying",
            UncertaintyKind::PolytopicTimeInvariant => "polytopic-time-invariant",
            UncertaintyKind::NormBounded => "norm-bounded",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintySpec {
    kind: UncertaintyKind,
    vertices: Vec<Vector>,
    nq: usize,
    np: usize,
}

impl UncertaintySpec {
    fn polytopic(kind: UncertaintyKind, vertices: Vec<Vec<f64>>) -> Result<Self> {
        let nq = vertices
            .first()
            .map(|v| v.len())
            .ok_or_else(|| Error::InvalidUncertainty("at least one vertex is required".into()))?;
        if nq == 0 {
            return Err(Error::InvalidUncertainty("vertices must be nonempty vectors".into()));
        }
        if let Some(bad) = vertices.iter().position(|v| v.len() != nq) {
            return Err(Error::InvalidUncertainty(format!(
                "vertex {} has length {}, expected {nq}",
                bad + 1,
                vertices[bad].len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidUncertainty("vertices must be finite".into()));
        }
        Ok(Self { kind, vertices: vertices.into_iter().map(Vector::from_vec).collect(), nq, np: nq })
    }

    pub fn polytopic_time_varying(vertices: Vec<Vec<f64>>) -> Result<Self> {
        Self::polytopic(UncertaintyKind::PolytopicTimeVarying, vertices)
    }

    pub fn polytopic_time_invariant(vertices: Vec<Vec<f64>>) -> Result<Self> {
        Self::polytopic(UncertaintyKind::PolytopicTimeInvariant, vertices)
    }

    /// Time-varying `p_k = Delta_k q_k` with `Delta_k^T Delta_k ⪯ I`.
    pub fn norm_bounded(nq: usize, np: usize) -> Self {
        Self { kind: UncertaintyKind::NormBounded, vertices: Vec::new(), nq, np }
    }

    /// No uncertainty channel at all.
    pub fn none() -> Self {
        Self::norm_bounded(0, 0)
    }

    pub fn kind(&self) -> UncertaintyKind {
        self.kind
    }
    pub fn vertices(&self) -> &[Vector] {
        &self.vertices
    }
    pub fn nq(&self) -> usize {
        self.nq
    }
    pub fn np(&self) -> usize {
        self.np
    }

    /// The same parameter set viewed as time-varying.
    pub fn as_time_varying(&self) -> Self {
        let mut s = self.clone();
        if s.kind == UncertaintyKind::PolytopicTimeInvariant {
            s.kind = UncertaintyKind::PolytopicTimeVarying;
        }
        s
    }
}

#[derive(Clone, Debug)]
enum Recipe {
    PolytopicTv { vertices: Vec<Vector> },
    PolytopicTi { vertices: Vec<Vector>, basis: BasisBlock },
    NormBounded { nq: usize, np: usize },
}

/// Sizes of the multiplier decision variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarShapes {
    pub m: usize,
    pub x: usize,
    pub y: Vec<usize>,
    pub epsilon: bool,
}

/// Multiplier expressions registered in a program.
#[derive(Clone, Debug)]
pub struct MultiplierVars {
    /// Multiplier on the filter output (`ns x ns`).
    pub m: AffineExpr,
    /// Terminal cost on the filter state (`npsi x npsi`, zero for pointwise classes).
    pub x: AffineExpr,
    pub names: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct MultiplierClass {
    recipe: Recipe,
    filter: Filter,
    pointwise: bool,
}

impl MultiplierClass {
    pub fn filter(&self) -> &Filter {
        &self.filter
    }
    pub fn pointwise(&self) -> bool {
        self.pointwise
    }
    /// Pointwise classes never carry a terminal cost.
    pub fn terminal_cost_zero(&self) -> bool {
        self.pointwise
    }
    pub fn basis(&self) -> Option<&BasisBlock> {
        match &self.recipe {
            Recipe::PolytopicTi { basis, .. } => Some(basis),
            _ => None,
        }
    }
    pub fn label(&self) -> &'static str {
        match self.recipe {
            Recipe::PolytopicTv { .. } => "ptv",
            Recipe::PolytopicTi { .. } => "pti",
            Recipe::NormBounded { .. } => "normbound",
        }
    }

    pub fn var_shapes(&self) -> VarShapes {
        let ns = self.filter.nout();
        let npsi = self.filter.nstate();
        match &self.recipe {
            Recipe::PolytopicTv { .. } => VarShapes { m: ns, x: 0, y: vec![], epsilon: false },
            Recipe::PolytopicTi { vertices, .. } => {
                VarShapes { m: ns, x: npsi, y: vec![npsi; vertices.len()], epsilon: false }
            }
            Recipe::NormBounded { .. } => VarShapes { m: 0, x: 0, y: vec![], epsilon: true },
        }
    }

    /// Number of matrix inequalities emitted by [`MultiplierClass::instantiate`].
    pub fn constraint_count(&self) -> usize {
        match &self.recipe {
            Recipe::PolytopicTv { vertices } => 1 + vertices.len(),
            Recipe::PolytopicTi { vertices, .. } => 1 + 2 * vertices.len(),
            Recipe::NormBounded { .. } => 1,
        }
    }

    /// Declares the multiplier variables (names suffixed with `suffix`) and
    /// adds the constraints describing the admissible set at rate `rho`.
    pub fn instantiate(&self, prog: &mut SdpProgram, rho: f64, suffix: &str) -> Result<MultiplierVars> {
        match &self.recipe {
            Recipe::PolytopicTv { vertices } => {
                let nq = vertices[0].len();
                let mv = prog.declare_symmetric(&format!("M{suffix}"), 2 * nq)?;
                let m = AffineExpr::var(&mv);
                let lower = vstack(&[&zeros(nq, nq), &eye(nq)]);
                prog.add_constraint(&format!("ptv{suffix}:neg"), m.congruence(&lower)?, Sense::NegSemidef)?;
                for (j, d) in vertices.iter().enumerate() {
                    let f = vstack(&[&eye(nq), &Mat::from_diagonal(d)]);
                    prog.add_constraint(&format!("ptv{suffix}:vertex{}", j + 1), m.congruence(&f)?, Sense::PosSemidef)?;
                }
                Ok(MultiplierVars { m, x: AffineExpr::zeros(0, 0), names: vec![mv.name] })
            }
            Recipe::PolytopicTi { vertices, basis } => self.instantiate_ti(prog, rho, suffix, vertices, basis),
            Recipe::NormBounded { nq, np } => {
                let eps = prog.declare_scalar(&format!("eps{suffix}"))?;
                prog.add_constraint(&format!("normbound{suffix}:eps"), AffineExpr::var(&eps), Sense::PosSemidef)?;
                let j = Mat::from_diagonal(&Vector::from_fn(nq + np, |i, _| if i < *nq { 1.0 } else { -1.0 }));
                Ok(MultiplierVars {
                    m: AffineExpr::scalar_times(&eps, j),
                    x: AffineExpr::zeros(0, 0),
                    names: vec![eps.name],
                })
            }
        }
    }

    fn instantiate_ti(
        &self,
        prog: &mut SdpProgram,
        rho: f64,
        suffix: &str,
        vertices: &[Vector],
        basis: &BasisBlock,
    ) -> Result<MultiplierVars> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!("decay rate must lie in (0, 1), got {rho}")));
        }
        let nq = vertices[0].len();
        let f = &self.filter;
        let (ns, npsi) = (f.nout(), f.nstate());
        let (half_s, half_psi) = (ns / 2, npsi / 2);
        let mv = prog.declare_symmetric(&format!("M{suffix}"), ns)?;
        let xv = prog.declare_symmetric(&format!("X{suffix}"), npsi)?;
        let m = AffineExpr::var(&mv);
        let x = AffineExpr::var(&xv);
        let mut names = vec![mv.name.clone(), xv.name.clone()];

        // lower-right blocks act on the p-channel copy of the basis
        let sel_x = vstack(&[&zeros(half_psi, half_psi), &eye(half_psi)]);
        let sel_m = vstack(&[&zeros(half_s, half_s), &eye(half_s)]);
        let i = eye(nq);
        let (ka, kb, kc, kd) = (kron(&i, basis.a()), kron(&i, basis.b()), kron(&i, basis.c()), kron(&i, basis.d()));
        let top = hstack(&[&eye(half_psi), &zeros(half_psi, nq)]);
        let mid = hstack(&[&ka, &kb]);
        let bot = hstack(&[&kc, &kd]);
        let e13 = (x.clone() * -rho).congruence(&(&sel_x * &top))?
            + x.congruence(&(&sel_x * &mid))?
            + m.congruence(&(&sel_m * &bot))?;
        prog.add_constraint(&format!("pti{suffix}:concavity"), e13, Sense::NegSemidef)?;

        let top = hstack(&[&eye(npsi), &zeros(npsi, nq)]);
        for (j, d) in vertices.iter().enumerate() {
            let yv = prog.declare_symmetric(&format!("Y{}{suffix}", j + 1), npsi)?;
            let y = AffineExpr::var(&yv);
            names.push(yv.name.clone());
            let dd = Mat::from_diagonal(d);
            let mid = hstack(&[f.a(), &(f.bq() + f.bp() * &dd)]);
            let bot = hstack(&[f.c(), &(f.dq() + f.dp() * &dd)]);
            let e14 = (y.clone() * -rho).congruence(&top)? + y.congruence(&mid)? + m.congruence(&bot)?;
            prog.add_constraint(&format!("pti{suffix}:vertex{}", j + 1), e14, Sense::PosSemidef)?;
            prog.add_constraint(&format!("pti{suffix}:terminal{}", j + 1), y - x.clone(), Sense::NegSemidef)?;
        }
        Ok(MultiplierVars { m, x, names })
    }

    /// Signed slack of each class constraint for given multiplier values
    /// (keyed by variable name, unsuffixed). Nonnegative means satisfied.
    pub fn constraint_slacks(&self, rho: f64, values: &BTreeMap<String, Mat>) -> Result<Vec<(String, f64)>> {
        let mut prog = SdpProgram::new();
        self.instantiate(&mut prog, rho, "")?;
        let a = prog.assignment_from_named(values)?;
        prog.constraints()
            .iter()
            .map(|c| Ok((c.name.clone(), c.slack(&a)?)))
            .collect()
    }

    /// Numeric `(M, X)` from stored variable values, for a given suffix.
    pub fn multiplier_values(&self, rho: f64, values: &BTreeMap<String, Mat>, suffix: &str) -> Result<(Mat, Mat)> {
        let mut prog = SdpProgram::new();
        let mv = self.instantiate(&mut prog, rho, suffix)?;
        let a = prog.assignment_from_named(values)?;
        Ok((mv.m.try_eval(&a)?, mv.x.try_eval(&a)?))
    }
}

fn require_kind(spec: &UncertaintySpec, kind: UncertaintyKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::WrongKind { expected: kind.label(), found: spec.kind.label() });
    }
    Ok(())
}

/// Pointwise multipliers for time-varying polytopic parameters.
pub fn class_polytopic_tv(spec: &UncertaintySpec) -> Result<MultiplierClass> {
    require_kind(spec, UncertaintyKind::PolytopicTimeVarying)?;
    Ok(MultiplierClass {
        recipe: Recipe::PolytopicTv { vertices: spec.vertices.clone() },
        filter: static_identity_filter(spec.nq, spec.np),
        pointwise: true,
    })
}

/// Dynamic multipliers with terminal cost for time-invariant polytopic
/// parameters.
pub fn class_polytopic_ti(spec: &UncertaintySpec, phi: &BasisBlock) -> Result<MultiplierClass> {
    require_kind(spec, UncertaintyKind::PolytopicTimeInvariant)?;
    Ok(MultiplierClass {
        recipe: Recipe::PolytopicTi { vertices: spec.vertices.clone(), basis: phi.clone() },
        filter: kron_identity_filter(phi, spec.nq)?,
        pointwise: false,
    })
}

/// Pointwise multipliers `eps diag(I, -I)` for norm-bounded gains.
pub fn class_norm_bounded(spec: &UncertaintySpec) -> Result<MultiplierClass> {
    require_kind(spec, UncertaintyKind::NormBounded)?;
    Ok(MultiplierClass {
        recipe: Recipe::NormBounded { nq: spec.nq, np: spec.np },
        filter: static_identity_filter(spec.nq, spec.np),
        pointwise: true,
    })
}

/// Uniform sample from the simplex with `m` vertices.
pub fn dirichlet_weights<R: rand::Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    use rand_distr::{Distribution, Exp1};
    let raw: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Convex combination of the vertices of a polytopic spec.
pub fn combine_vertices(spec: &UncertaintySpec, weights: &[f64]) -> Vector {
    spec.vertices
        .iter()
        .zip(weights)
        .fold(Vector::zeros(spec.nq), |acc, (v, w)| acc + v * *w)
}
