//! Canonical conic form and the solver contract.
//!
//! A program is mapped to `min c^T x  s.t.  b - A x ∈ K`, where `x` stacks the
//! free parameters of every variable (upper triangles, column-major) and `K`
//! is a product of zero, nonnegative, PSD-triangle and exponential cones. PSD
//! blocks use the scaled vectorisation: upper triangle, column-major, with
//! off-diagonal entries multiplied by `sqrt(2)` so that inner products are
//! preserved.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, Mat};
use crate::lmi::{Assignment, MatrixVariable, SdpProgram, Scaling, Sense, Term, VarShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    Nonnegative(usize),
    /// PSD cone of the given matrix order.
    Psd(usize),
    Exponential,
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonnegative(n) => n,
            Cone::Psd(n) => n * (n + 1) / 2,
            Cone::Exponential => 3,
        }
    }
}

#[derive(Clone, Debug)]
struct VarSlot {
    offset: usize,
    shape: VarShape,
    scaling: Scaling,
}

#[derive(Clone, Debug)]
pub struct ConicProblem {
    pub objective: Vec<f64>,
    /// Constraint matrix `A` in triplet form `(row, col, value)`.
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub cones: Vec<Cone>,
    /// Row offset of each cone.
    pub offsets: Vec<usize>,
    /// Name of the program constraint that produced each cone.
    pub cone_names: Vec<String>,
    slots: Vec<VarSlot>,
    n_vars: usize,
    scale: f64,
}

/// Upper-triangle, column-major index of `(i, j)` with `i <= j`.
fn tri_index(i: usize, j: usize) -> usize {
    j * (j + 1) / 2 + i
}

impl ConicProblem {
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }
    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }
    pub fn psd_orders(&self) -> Vec<usize> {
        self.cones
            .iter()
            .filter_map(|c| if let Cone::Psd(n) = c { Some(*n) } else { None })
            .collect()
    }

    /// Stacks an assignment into the solver vector (in the rescaled variables).
    pub fn encode(&self, a: &Assignment) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.n_vars];
        for (idx, slot) in self.slots.iter().enumerate() {
            let id = crate::lmi::VarId(idx);
            let v = a.get(id).ok_or_else(|| Error::UnknownVariable(format!("#{idx}")))?;
            match slot.shape {
                VarShape::Scalar => x[slot.offset] = self.to_scaled(slot.scaling, v[(0, 0)]),
                VarShape::Symmetric(n) => {
                    for j in 0..n {
                        for i in 0..=j {
                            x[slot.offset + tri_index(i, j)] = self.to_scaled(slot.scaling, v[(i, j)]);
                        }
                    }
                }
            }
        }
        Ok(x)
    }

    /// Inverse of [`ConicProblem::encode`].
    pub fn decode(&self, x: &[f64]) -> Assignment {
        let mut a = Assignment::new();
        for (idx, slot) in self.slots.iter().enumerate() {
            let id = crate::lmi::VarId(idx);
            match slot.shape {
                VarShape::Scalar => a.set_scalar(id, self.from_scaled(slot.scaling, x[slot.offset])),
                VarShape::Symmetric(n) => {
                    let mut m = Mat::zeros(n, n);
                    for j in 0..n {
                        for i in 0..=j {
                            let v = self.from_scaled(slot.scaling, x[slot.offset + tri_index(i, j)]);
                            m[(i, j)] = v;
                            m[(j, i)] = v;
                        }
                    }
                    a.set(id, m);
                }
            }
        }
        a
    }

    fn to_scaled(&self, scaling: Scaling, v: f64) -> f64 {
        match scaling {
            Scaling::Homogeneous => v * self.scale,
            Scaling::Logarithmic => v + self.scale.ln(),
        }
    }

    fn from_scaled(&self, scaling: Scaling, v: f64) -> f64 {
        match scaling {
            Scaling::Homogeneous => v / self.scale,
            Scaling::Logarithmic => v - self.scale.ln(),
        }
    }
}

/// Per-scalar coefficient matrices of an expression. Key is the solver
/// column; the constant term is returned separately.
fn expand(
    expr: &crate::lmi::AffineExpr,
    slots: &[VarSlot],
) -> (Mat, BTreeMap<usize, Mat>) {
    let (r, c) = expr.shape();
    let mut coefs: BTreeMap<usize, Mat> = BTreeMap::new();
    let mut add = |col: usize, m: Mat| {
        coefs.entry(col).and_modify(|acc| *acc += &m).or_insert(m);
    };
    for t in &expr.terms {
        match t {
            Term::Scalar { var, coef } => add(slots[var.0].offset, coef.clone()),
            Term::Matrix { var, left, right } => {
                let slot = &slots[var.0];
                let n = slot.shape.dim();
                for j in 0..n {
                    for i in 0..=j {
                        let mut m = left.column(i) * right.row(j);
                        if i != j {
                            m += left.column(j) * right.row(i);
                        }
                        add(slot.offset + tri_index(i, j), m);
                    }
                }
            }
        }
    }
    debug_assert!(coefs.values().all(|m| m.shape() == (r, c)));
    (expr.constant.clone(), coefs)
}

fn svec(m: &Mat, scaled: bool) -> Vec<f64> {
    let n = m.nrows();
    let s2 = if scaled { std::f64::consts::SQRT_2 } else { 1.0 };
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            // average the two triangles; asymmetry is checked by the caller
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out.push(if i == j { v } else { s2 * v });
        }
    }
    out
}

fn asymmetry(m: &Mat) -> f64 {
    max_abs(&(m - m.transpose()))
}

pub fn canonicalize(program: &SdpProgram) -> Result<ConicProblem> {
    let vars: &[MatrixVariable] = program.variables();
    if vars.is_empty() {
        return Err(Error::EmptyProgram);
    }
    let mut slots = Vec::with_capacity(vars.len());
    let mut n_vars = 0;
    for v in vars {
        slots.push(VarSlot { offset: n_vars, shape: v.shape, scaling: v.scaling });
        n_vars += v.shape.n_free();
    }
    let scale = program.scale();

    let mut triplets = Vec::new();
    let mut rhs = Vec::new();
    let mut cones = Vec::new();
    let mut offsets = Vec::new();
    let mut cone_names = Vec::new();

    for c in program.constraints() {
        let n = c.order();
        if n == 0 {
            continue;
        }
        let sign = if c.sense == Sense::NegSemidef { -1.0 } else { 1.0 };
        let (c0, coefs) = expand(&c.expr, &slots);
        let tol = 1e-9 * (1.0 + max_abs(&c0) + coefs.values().map(max_abs).fold(0.0, f64::max));
        if asymmetry(&c0) > tol || coefs.values().any(|m| asymmetry(m) > tol) {
            return Err(Error::ShapeMismatch(format!("constraint `{}` is not symmetric", c.name)));
        }
        let (cone, scaled) = match c.sense {
            Sense::Zero => (Cone::Zero(n * (n + 1) / 2), false),
            _ if n == 1 => (Cone::Nonnegative(1), false),
            _ => (Cone::Psd(n), true),
        };
        let row0 = rhs.len();
        rhs.extend(svec(&(c0 * (sign * scale)), scaled));
        for (col, m) in coefs {
            for (k, v) in svec(&(m * sign), scaled).into_iter().enumerate() {
                if v != 0.0 {
                    triplets.push((row0 + k, col, -v));
                }
            }
        }
        offsets.push(row0);
        cones.push(cone);
        cone_names.push(c.name.clone());
    }

    for e in program.exp_cones() {
        let row0 = rhs.len();
        let (t0, tc) = expand(&e.t, &slots);
        let (z0, zc) = expand(&e.z, &slots);
        rhs.push(t0[(0, 0)]);
        rhs.push(1.0);
        rhs.push(z0[(0, 0)] * scale);
        for (col, m) in tc {
            triplets.push((row0, col, -m[(0, 0)]));
        }
        for (col, m) in zc {
            triplets.push((row0 + 2, col, -m[(0, 0)]));
        }
        offsets.push(row0);
        cones.push(Cone::Exponential);
        cone_names.push(e.name.clone());
    }

    let mut objective = vec![0.0; n_vars];
    let (_, oc) = expand(program.objective(), &slots);
    for (col, m) in oc {
        objective[col] += m[(0, 0)];
    }
    Ok(ConicProblem { objective, triplets, rhs, cones, offsets, cone_names, slots, n_vars, scale })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol_feas: f64,
    pub tol_gap_rel: f64,
    pub tol_gap_abs: f64,
    pub max_iter: u32,
    pub verbose: bool,
    /// Re-solves after numerical trouble, each time with tolerances 100x looser.
    pub retries: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol_feas: 1e-8, tol_gap_rel: 1e-8, tol_gap_abs: 1e-8, max_iter: 200, verbose: false, retries: 1 }
    }
}

impl SolveOptions {
    /// Same tolerance for feasibility and both gap criteria.
    pub fn with_tol(tol: f64) -> Self {
        Self { tol_feas: tol, tol_gap_rel: tol, tol_gap_abs: tol, ..Self::default() }
    }

    fn loosened(&self) -> Self {
        Self {
            tol_feas: self.tol_feas * 100.0,
            tol_gap_rel: self.tol_gap_rel * 100.0,
            tol_gap_abs: self.tol_gap_abs * 100.0,
            retries: self.retries.saturating_sub(1),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverStats {
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub solve_time_s: f64,
}

/// What a backend hands back, in solver coordinates.
#[derive(Clone, Debug)]
pub struct RawSolution {
    pub status: SolveStatus,
    pub detail: String,
    pub x: Vec<f64>,
    pub objective: f64,
    pub stats: SolverStats,
}

/// A conic interior-point solver.
pub trait ConicSolver {
    fn solve(&self, problem: &ConicProblem, opts: &SolveOptions) -> Result<RawSolution>;
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: f64,
    /// Decoded primal point (original, un-scaled variables). Present when optimal.
    pub assignment: Option<Assignment>,
    pub stats: SolverStats,
}

/// Clarabel-backed reference solver.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClarabelSolver;

impl ConicSolver for ClarabelSolver {
    fn solve(&self, problem: &ConicProblem, opts: &SolveOptions) -> Result<RawSolution> {
        use clarabel::algebra::CscMatrix;
        use clarabel::solver::{
            DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
        };

        let n = problem.n_vars;
        let m = problem.n_rows();
        let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        for &(r, c, v) in &problem.triplets {
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
        let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
        let p = CscMatrix::<f64>::zeros((n, n));
        let cones: Vec<SupportedConeT<f64>> = problem
            .cones
            .iter()
            .map(|c| match *c {
                Cone::Zero(k) => SupportedConeT::ZeroConeT(k),
                Cone::Nonnegative(k) => SupportedConeT::NonnegativeConeT(k),
                Cone::Psd(k) => SupportedConeT::PSDTriangleConeT(k),
                Cone::Exponential => SupportedConeT::ExponentialConeT(),
            })
            .collect();
        let settings = DefaultSettingsBuilder::default()
            .verbose(opts.verbose)
            .max_iter(opts.max_iter)
            .tol_feas(opts.tol_feas)
            .tol_gap_abs(opts.tol_gap_abs)
            .tol_gap_rel(opts.tol_gap_rel)
            .build()
            .map_err(|e| Error::SolverFailure { message: format!("settings: {e:?}"), rho: None, lambda: None })?;
        let start = Instant::now();
        let mut solver = DefaultSolver::new(&p, &problem.objective, &a, &problem.rhs, &cones, settings)
            .map_err(|e| Error::SolverFailure { message: format!("setup: {e:?}"), rho: None, lambda: None })?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ => SolveStatus::NumericalLimit,
        };
        Ok(RawSolution {
            status,
            detail: format!("{:?}", sol.status),
            x: sol.x.clone(),
            objective: sol.obj_val,
            stats: SolverStats {
                iterations: sol.iterations,
                primal_residual: sol.r_prim,
                dual_residual: sol.r_dual,
                solve_time_s: start.elapsed().as_secs_f64(),
            },
        })
    }
}

/// Solves with the reference backend.
pub fn solve(problem: &ConicProblem, opts: &SolveOptions) -> Result<SolveResult> {
    solve_with(&ClarabelSolver, problem, opts)
}

/// Like [`solve_with`], retrying at looser tolerances while
/// `opts.retries` allows.
pub fn solve_with_retries<S: ConicSolver + ?Sized>(backend: &S, problem: &ConicProblem, opts: &SolveOptions) -> Result<SolveResult> {
    match solve_with(backend, problem, opts) {
        Err(Error::SolverFailure { .. }) if opts.retries > 0 => solve_with_retries(backend, problem, &opts.loosened()),
        r => r,
    }
}

/// Solves with any backend. Numerical trouble is reported as
/// [`Error::SolverFailure`]; infeasible and unbounded outcomes are regular
/// results without an assignment.
pub fn solve_with<S: ConicSolver + ?Sized>(backend: &S, problem: &ConicProblem, opts: &SolveOptions) -> Result<SolveResult> {
    let raw = backend.solve(problem, opts)?;
    match raw.status {
        SolveStatus::NumericalLimit => Err(Error::SolverFailure {
            message: format!(
                "{} after {} iterations (primal residual {:.2e}, dual residual {:.2e})",
                raw.detail, raw.stats.iterations, raw.stats.primal_residual, raw.stats.dual_residual
            ),
            rho: None,
            lambda: None,
        }),
        SolveStatus::Optimal => Ok(SolveResult {
            status: raw.status,
            objective: raw.objective,
            assignment: Some(problem.decode(&raw.x)),
            stats: raw.stats,
        }),
        _ => Ok(SolveResult { status: raw.status, objective: raw.objective, assignment: None, stats: raw.stats }),
    }
}

/// Canonicalises and solves in one go, with retries.
pub fn solve_program(program: &SdpProgram, opts: &SolveOptions) -> Result<SolveResult> {
    let problem = canonicalize(program)?;
    solve_with_retries(&ClarabelSolver, &problem, opts).map_err(|e| e.at_point(program.rho, program.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eye, from_rows};
    use crate::lmi::AffineExpr;

    #[test]
    fn scalar_lower_bound() {
        let mut p = SdpProgram::new();
        let g = p.declare_scalar("gamma").unwrap();
        p.add_constraint("lb", AffineExpr::var(&g) - AffineExpr::constant(from_rows(&[&[3.0]])), Sense::PosSemidef)
            .unwrap();
        p.minimize(AffineExpr::var(&g)).unwrap();
        let cp = canonicalize(&p).unwrap();
        assert_eq!(cp.n_vars(), 1);
        assert_eq!(cp.cones, vec![Cone::Nonnegative(1)]);
        let r = solve(&cp, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let gv = r.assignment.unwrap().scalar(g.id).unwrap();
        assert!((gv - 3.0).abs() < 1e-9, "{gv}");
    }

    #[test]
    fn single_psd_block() {
        let mut p = SdpProgram::new();
        let v = p.declare_symmetric("P", 2).unwrap();
        p.add_constraint("psd", AffineExpr::var(&v), Sense::PosSemidef).unwrap();
        let cp = canonicalize(&p).unwrap();
        assert_eq!(cp.cones, vec![Cone::Psd(2)]);
        assert_eq!(cp.n_vars(), 3);
    }

    #[test]
    fn contradictory_constraints_are_infeasible() {
        let mut p = SdpProgram::new();
        let v = p.declare_symmetric("P", 2).unwrap();
        let i = AffineExpr::constant(eye(2));
        p.add_constraint("a", AffineExpr::var(&v) - i.clone(), Sense::PosSemidef).unwrap();
        p.add_constraint("b", -AffineExpr::var(&v) - i, Sense::PosSemidef).unwrap();
        let r = solve_program(&p, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.assignment.is_none());
    }

    struct Flaky {
        fail_below: f64,
        calls: std::cell::Cell<u32>,
    }

    impl ConicSolver for Flaky {
        fn solve(&self, problem: &ConicProblem, opts: &SolveOptions) -> Result<RawSolution> {
            self.calls.set(self.calls.get() + 1);
            let status = if opts.tol_feas < self.fail_below { SolveStatus::NumericalLimit } else { SolveStatus::Optimal };
            Ok(RawSolution {
                status,
                detail: "stub".into(),
                x: vec![0.0; problem.n_vars()],
                objective: 0.0,
                stats: SolverStats::default(),
            })
        }
    }

    #[test]
    fn retries_loosen_tolerances() {
        let mut p = SdpProgram::new();
        let v = p.declare_symmetric("P", 1).unwrap();
        p.add_constraint("psd", AffineExpr::var(&v), Sense::PosSemidef).unwrap();
        let cp = canonicalize(&p).unwrap();
        let opts = SolveOptions::default();

        let b = Flaky { fail_below: 1e-7, calls: 0.into() };
        assert_eq!(solve_with_retries(&b, &cp, &opts).unwrap().status, SolveStatus::Optimal);
        assert_eq!(b.calls.get(), 2);

        let b = Flaky { fail_below: 1e-3, calls: 0.into() };
        assert!(matches!(solve_with_retries(&b, &cp, &opts), Err(Error::SolverFailure { .. })));
        assert_eq!(b.calls.get(), 2);

        let b = Flaky { fail_below: 1e-7, calls: 0.into() };
        let strict = SolveOptions { retries: 0, ..opts };
        assert!(solve_with_retries(&b, &cp, &strict).is_err());
        assert_eq!(b.calls.get(), 1);
    }

    #[test]
    fn empty_program_rejected() {
        assert_eq!(canonicalize(&SdpProgram::new()).unwrap_err(), Error::EmptyProgram);
    }

    #[test]
    fn eigenvalue_bound() {
        // min t s.t. t I - A ⪰ 0  => t = lambda_max(A)
        let a = from_rows(&[&[2.0, 1.0, 0.0], &[1.0, 3.0, 0.5], &[0.0, 0.5, 1.0]]);
        let lmax = a.clone().symmetric_eigenvalues().max();
        let mut p = SdpProgram::new();
        let t = p.declare_scalar("t").unwrap();
        p.add_constraint("c", AffineExpr::scalar_times(&t, eye(3)) - AffineExpr::constant(a), Sense::PosSemidef)
            .unwrap();
        p.minimize(AffineExpr::var(&t)).unwrap();
        let r = solve_program(&p, &SolveOptions::default()).unwrap();
        assert!((r.assignment.unwrap().scalar(t.id).unwrap() - lmax).abs() < 1e-7);
    }

    #[test]
    fn rescaling_preserves_solution() {
        let a = from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let mut p = SdpProgram::new();
        let t = p.declare_scalar("t").unwrap();
        p.add_constraint("c", AffineExpr::scalar_times(&t, eye(2)) - AffineExpr::constant(a), Sense::PosSemidef)
            .unwrap();
        p.minimize(AffineExpr::var(&t)).unwrap();
        let r1 = solve_program(&p, &SolveOptions::default()).unwrap();
        let r2 = solve_program(&p.rescaled(1000.0).unwrap(), &SolveOptions::default()).unwrap();
        let (v1, v2) = (r1.assignment.unwrap().scalar(t.id).unwrap(), r2.assignment.unwrap().scalar(t.id).unwrap());
        assert!((v1 - v2).abs() < 1e-6 * v1.abs().max(1.0), "{v1} vs {v2}");
    }

    #[test]
    fn exponential_cone_gives_log() {
        // max t s.t. exp(t) <= z, z <= 5  => t = ln 5
        let mut p = SdpProgram::new();
        let t = p.declare_log_scalar("t").unwrap();
        let z = p.declare_scalar("z").unwrap();
        p.add_exp_cone("e", AffineExpr::var(&t), AffineExpr::var(&z)).unwrap();
        p.add_constraint("ub", AffineExpr::constant(from_rows(&[&[5.0]])) - AffineExpr::var(&z), Sense::PosSemidef)
            .unwrap();
        p.minimize(-AffineExpr::var(&t)).unwrap();
        let r = solve_program(&p, &SolveOptions::default()).unwrap();
        assert!((r.assignment.unwrap().scalar(t.id).unwrap() - 5f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn equality_constraint() {
        let mut p = SdpProgram::new();
        let x = p.declare_symmetric("X", 2).unwrap();
        let target = from_rows(&[&[1.0, 0.5], &[0.5, 2.0]]);
        p.add_constraint("eq", AffineExpr::var(&x) - AffineExpr::constant(target.clone()), Sense::Zero).unwrap();
        let r = solve_program(&p, &SolveOptions::default()).unwrap();
        assert!((r.assignment.unwrap().get(x.id).unwrap() - target).amax() < 1e-8);
    }
}
