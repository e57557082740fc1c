//! Certified analyses: the smallest gain bound at a fixed decay rate, line
//! searches over the decay rate and the basis pole, and invariant-ellipsoid
//! volume maximisation.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqc::{class_norm_bounded, class_polytopic_ti, class_polytopic_tv, MultiplierClass, UncertaintyKind, UncertaintySpec};
use crate::linalg::{is_zero, serde_mat, Mat};
use crate::oracle::vertex_spectral_radius;
use crate::lmi::{
    build_dissipation, build_output_schur, build_pointwise_output_schur, build_reach_program, AffineExpr, SdpProgram,
    Sense, ShapeMode, GAMMA_FLOOR,
};
use crate::sdp::{solve_program, SolveOptions, SolveResult, SolveStatus, SolverStats};
use crate::system::{augment, basis_filter, AugmentedPlant, Plant};

/// Which output inequality closes the gain bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Output inequality with terminal cost, sharing the multiplier.
    #[serde(rename = "thm1")]
    TerminalCost,
    /// Pointwise output inequality with an independent second multiplier.
    #[serde(rename = "thm2")]
    SplitMultiplier,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::TerminalCost => "thm1",
            Variant::SplitMultiplier => "thm2",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thm1" => Ok(Variant::TerminalCost),
            "thm2" => Ok(Variant::SplitMultiplier),
            _ => Err(Error::InvalidArgument(format!("unknown variant `{s}` (expected thm1 or thm2)"))),
        }
    }
}

/// Multiplier class selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassChoice {
    Ptv,
    Pti,
    Normbound,
}

impl ClassChoice {
    pub fn label(self) -> &'static str {
        match self {
            ClassChoice::Ptv => "ptv",
            ClassChoice::Pti => "pti",
            ClassChoice::Normbound => "normbound",
        }
    }

    /// Natural class for an uncertainty description.
    pub fn for_kind(kind: UncertaintyKind) -> Self {
        match kind {
            UncertaintyKind::PolytopicTimeVarying => ClassChoice::Ptv,
            UncertaintyKind::PolytopicTimeInvariant => ClassChoice::Pti,
            UncertaintyKind::NormBounded => ClassChoice::Normbound,
        }
    }

    pub fn uses_basis(self) -> bool {
        self == ClassChoice::Pti
    }
}

impl FromStr for ClassChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ptv" => Ok(ClassChoice::Ptv),
            "pti" => Ok(ClassChoice::Pti),
            "normbound" => Ok(ClassChoice::Normbound),
            _ => Err(Error::InvalidArgument(format!("unknown class `{s}` (expected ptv, pti or normbound)"))),
        }
    }
}

/// Builds the multiplier class. Time-invariant parameters may be analysed
/// with the time-varying class, which covers them.
pub fn build_class(spec: &UncertaintySpec, choice: ClassChoice, lambda: Option<f64>, nu: usize) -> Result<MultiplierClass> {
    match choice {
        ClassChoice::Ptv => class_polytopic_tv(&spec.as_time_varying()),
        ClassChoice::Pti => {
            let lambda = lambda.ok_or_else(|| Error::InvalidArgument("class pti needs a basis pole".into()))?;
            class_polytopic_ti(spec, &basis_filter(lambda, nu)?)
        }
        ClassChoice::Normbound => class_norm_bounded(spec),
    }
}

/// Solver settings shared by every program of an analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub solve: SolveOptions,
    /// Homogeneous rescaling factor applied before solving.
    pub scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { solve: SolveOptions::default(), scale: 1.0 }
    }
}

/// A one-dimensional search: grid evaluation followed by golden-section
/// refinement between the neighbours of the best grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub refine: usize,
    /// Logarithmic spacing (and refinement in log coordinates).
    pub log: bool,
}

impl SearchGrid {
    pub fn rho_default() -> Self {
        Self { lo: 0.02, hi: 0.98, points: 25, refine: 12, log: true }
    }
    pub fn lambda_default() -> Self {
        Self { lo: -0.9, hi: 0.9, points: 19, refine: 8, log: false }
    }
    pub fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v, points: 1, refine: 0, log: false }
    }

    pub fn validate(&self, name: &str, open: (f64, f64)) -> Result<()> {
        let ok = self.points >= 1
            && self.lo.is_finite()
            && self.hi.is_finite()
            && self.lo <= self.hi
            && self.lo > open.0
            && self.hi < open.1
            && (self.points > 1 || self.lo == self.hi)
            && (!self.log || self.lo > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{name} grid {}:{}:{} must lie inside ({}, {}) with lo <= hi",
                self.lo, self.hi, self.points, open.0, open.1
            )))
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        if n <= 1 {
            return vec![self.lo];
        }
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                if self.log {
                    (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp()
                } else {
                    self.lo + t * (self.hi - self.lo)
                }
            })
            .collect()
    }
}

/// One evaluated point of a line search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub at: f64,
    /// `None` when the point was infeasible or the solver gave up.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Searched<T> {
    pub best: T,
    pub at: f64,
    pub trace: Vec<SearchPoint>,
}

/// Failures that make a single search point count as `+inf`.
fn is_soft(e: &Error) -> bool {
    matches!(e, Error::Infeasible | Error::AllInfeasible | Error::SolverFailure { .. } | Error::VolumeUnbounded)
}

/// Grid then golden-section minimisation of `score(eval(t))`. Returns the
/// best point over all evaluations; ties go to the smaller argument.
pub fn line_search<T, F, S>(grid: &SearchGrid, eval: F, score: S) -> Result<Searched<T>>
where
    T: Send,
    F: Fn(f64) -> Result<T> + Sync,
    S: Fn(&T) -> f64 + Sync,
{
    let run = |t: f64| -> Result<(f64, Option<T>, Option<String>)> {
        match eval(t) {
            Ok(v) => Ok((t, Some(v), None)),
            Err(e) if is_soft(&e) => Ok((t, None, Some(e.to_string()))),
            Err(e) => Err(e),
        }
    };
    let grid_pts = grid.values();
    let mut evals: Vec<(f64, Option<T>, Option<String>)> =
        grid_pts.par_iter().map(|&t| run(t)).collect::<Result<Vec<_>>>()?;

    let value = |e: &(f64, Option<T>, Option<String>)| e.1.as_ref().map_or(f64::INFINITY, &score);
    let best_grid = (0..evals.len()).fold(None, |acc: Option<usize>, i| match acc {
        Some(j) if value(&evals[j]) <= value(&evals[i]) => Some(j),
        _ if value(&evals[i]).is_finite() => Some(i),
        _ => acc,
    });
    let Some(ib) = best_grid else {
        return Err(Error::AllInfeasible);
    };

    if grid.refine > 0 && grid_pts.len() > 1 {
        let (fwd, back): (fn(f64) -> f64, fn(f64) -> f64) =
            if grid.log { (f64::ln, f64::exp) } else { (|v| v, |v| v) };
        let mut a = fwd(grid_pts[ib.saturating_sub(1)]);
        let mut b = fwd(grid_pts[(ib + 1).min(grid_pts.len() - 1)]);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (ec, ed) = rayon::join(|| run(back(c)), || run(back(d)));
        let (ec, ed) = (ec?, ed?);
        let (mut fc, mut fd) = (value(&ec), value(&ed));
        evals.push(ec);
        evals.push(ed);
        for _ in 0..grid.refine {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                let e = run(back(c))?;
                fc = value(&e);
                evals.push(e);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                let e = run(back(d))?;
                fd = value(&e);
                evals.push(e);
            }
        }
    }

    let trace: Vec<SearchPoint> = evals
        .iter()
        .map(|e| SearchPoint { at: e.0, score: e.1.as_ref().map(&score), failure: e.2.clone() })
        .collect();
    let mut best: Option<(f64, f64, T)> = None;
    for (t, v, _) in evals {
        if let Some(v) = v {
            let s = score(&v);
            let better = match &best {
                None => true,
                Some((bt, bs, _)) => s < *bs || (s == *bs && t < *bt),
            };
            if better {
                best = Some((t, s, v));
            }
        }
    }
    let (at, _, best) = best.ok_or(Error::AllInfeasible)?;
    Ok(Searched { best, at, trace })
}

/// Result of a search over decay rate and basis pole.
#[derive(Clone, Debug)]
pub struct JointSearched<T> {
    pub best: T,
    pub rho: f64,
    pub lambda: f64,
    pub rho_trace: Vec<SearchPoint>,
    pub lambda_trace: Vec<SearchPoint>,
}

const MAX_ROUNDS: usize = 3;

/// Bracket spanning one grid step on each side of `at`.
fn local_grid(grid: &SearchGrid, at: f64) -> SearchGrid {
    if grid.points <= 1 {
        return *grid;
    }
    let steps = (grid.points - 1) as f64;
    let (lo, hi) = if grid.log {
        let f = (grid.hi / grid.lo).powf(1.0 / steps);
        (at / f, at * f)
    } else {
        let h = (grid.hi - grid.lo) / steps;
        (at - h, at + h)
    };
    SearchGrid { lo: lo.max(grid.lo), hi: hi.min(grid.hi), points: 3, refine: grid.refine, log: grid.log }
}

/// Alternating search over `(rho, lambda)`: a full decay-rate search at the
/// pole nearest the middle of the pole grid, a full pole search at the best
/// rate, then local refinements of each coordinate while the score improves.
pub fn joint_search<T, F, S>(rho_grid: &SearchGrid, lambda_grid: &SearchGrid, eval: F, score: S) -> Result<JointSearched<T>>
where
    T: Send,
    F: Fn(f64, f64) -> Result<T> + Sync,
    S: Fn(&T) -> f64 + Sync,
{
    let mid = 0.5 * (lambda_grid.lo + lambda_grid.hi);
    let mut lambda = lambda_grid
        .values()
        .into_iter()
        .min_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs()))
        .expect("grids have at least one point");
    let s = line_search(rho_grid, |r| eval(r, lambda), &score).map_err(|e| e.at_point(None, Some(lambda)))?;
    let (mut rho, mut best, mut rho_trace) = (s.at, s.best, s.trace);
    let mut lambda_trace = Vec::new();

    let lambda_stage = |grid: &SearchGrid, rho: f64, best: &mut T, lambda: &mut f64, trace: &mut Vec<SearchPoint>| {
        if let Ok(s) = line_search(grid, |l| eval(rho, l), &score) {
            if score(&s.best) < score(best) {
                *best = s.best;
                *lambda = s.at;
            }
            trace.extend(s.trace);
        }
    };
    lambda_stage(lambda_grid, rho, &mut best, &mut lambda, &mut lambda_trace);
    for _ in 0..MAX_ROUNDS {
        let before = score(&best);
        if let Ok(s) = line_search(&local_grid(rho_grid, rho), |r| eval(r, lambda), &score) {
            if score(&s.best) < score(&best) {
                best = s.best;
                rho = s.at;
            }
            rho_trace.extend(s.trace);
        }
        lambda_stage(&local_grid(lambda_grid, lambda), rho, &mut best, &mut lambda, &mut lambda_trace);
        if score(&best) >= before - 1e-9 * before.abs().max(1.0) {
            break;
        }
    }
    Ok(JointSearched { best, rho, lambda, rho_trace, lambda_trace })
}

/// Gain certificate: `||z||_peak <= gamma ||w||_peak` for every admissible
/// uncertainty, with the decision variables that prove it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainCertificate {
    pub gamma: f64,
    pub mu: f64,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<usize>,
    pub variant: Variant,
    pub class: ClassChoice,
    /// Second multiplier forced equal to the first.
    #[serde(default)]
    pub tie_multipliers: bool,
    /// Every decision variable by name (`P`, `M`, `X`, `Y1`, `M2`, ...).
    #[serde(with = "serde_mat::map")]
    pub values: BTreeMap<String, Mat>,
    pub stats: SolverStats,
    /// Worst normalised constraint slack at the decoded point.
    pub resubstitution_slack: f64,
    pub scale: f64,
}

impl GainCertificate {
    pub fn value(&self, name: &str) -> Result<&Mat> {
        self.values.get(name).ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }
}

/// The gain program at a fixed decay rate.
pub fn gain_program(aug: &AugmentedPlant, class: &MultiplierClass, rho: f64, variant: Variant, tie: bool) -> Result<SdpProgram> {
    let mut prog = SdpProgram::new();
    prog.rho = Some(rho);
    let mv = class.instantiate(&mut prog, rho, "")?;
    let (p, mu) = build_dissipation(&mut prog, aug, &mv, rho)?;
    let gamma = prog.declare_scalar("gamma")?;
    prog.add_constraint("gamma_ge_mu", AffineExpr::var(&gamma) - AffineExpr::var(&mu), Sense::PosSemidef)?;
    prog.add_constraint(
        "gamma_floor",
        AffineExpr::var(&gamma) - AffineExpr::constant(Mat::from_element(1, 1, GAMMA_FLOOR)),
        Sense::PosSemidef,
    )?;
    match variant {
        Variant::TerminalCost => build_output_schur(&mut prog, aug, &mv, rho, &p, &gamma, &mu)?,
        Variant::SplitMultiplier => {
            if !class.pointwise() {
                return Err(Error::PointwiseRequired);
            }
            let mv2 = if tie { mv } else { class.instantiate(&mut prog, rho, "2")? };
            build_pointwise_output_schur(&mut prog, aug, class, &mv2, rho, &p, &gamma, &mu)?;
        }
    }
    prog.minimize(AffineExpr::var(&gamma))?;
    Ok(prog)
}

/// Multiplies every constant term by `scale`; solutions are mapped back on
/// decode.
pub fn rescale_program(program: &SdpProgram, scale: f64) -> Result<SdpProgram> {
    program.rescaled(scale)
}

/// Extra rescaling tried once when the solver stalls at the configured scale.
pub const RESCUE_SCALE_FACTOR: f64 = 10.0;

/// Solves `program` rescaled by `cfg.scale`, falling back to
/// `cfg.scale * RESCUE_SCALE_FACTOR` after a solver failure.
fn solve_rescaled(program: &SdpProgram, cfg: &SolverConfig) -> Result<(SdpProgram, SolveResult, f64)> {
    let prog = rescale_program(program, cfg.scale)?;
    match solve_program(&prog, &cfg.solve) {
        Ok(res) => Ok((prog, res, cfg.scale)),
        Err(first @ Error::SolverFailure { .. }) => {
            let scale = cfg.scale * RESCUE_SCALE_FACTOR;
            let prog = rescale_program(program, scale)?;
            match solve_program(&prog, &cfg.solve) {
                Ok(res) => Ok((prog, res, scale)),
                Err(Error::SolverFailure { .. }) => Err(first),
                Err(e) => Err(e),
            }
        }
        Err(e) => Err(e),
    }
}

fn solve_gain(
    aug: &AugmentedPlant,
    class: &MultiplierClass,
    rho: f64,
    variant: Variant,
    tie: bool,
    cfg: &SolverConfig,
) -> Result<GainCertificate> {
    let (prog, res, scale) = solve_rescaled(&gain_program(aug, class, rho, variant, tie)?, cfg)?;
    match res.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible),
        _ => {
            return Err(Error::SolverFailure {
                message: format!("unexpected status {:?}", res.status),
                rho: Some(rho),
                lambda: None,
            })
        }
    }
    let a = res.assignment.expect("optimal result carries a point");
    let values = prog.named_values(&a);
    let slack = prog.worst_slack(&a)?.map_or(0.0, |(_, s)| s);
    Ok(GainCertificate {
        gamma: values["gamma"][(0, 0)],
        mu: values["mu"][(0, 0)],
        rho,
        lambda: class.basis().map(|b| b.lambda()),
        nu: class.basis().map(|b| b.nu()),
        variant,
        class: class_choice_of(class),
        tie_multipliers: tie,
        values,
        stats: res.stats,
        resubstitution_slack: slack,
        scale,
    })
}

fn class_choice_of(class: &MultiplierClass) -> ClassChoice {
    match class.label() {
        "pti" => ClassChoice::Pti,
        "ptv" => ClassChoice::Ptv,
        _ => ClassChoice::Normbound,
    }
}

/// Smallest gain bound at decay rate `rho` with the terminal-cost output
/// inequality. `Err(Infeasible)` means `+inf`.
pub fn gamma_star(aug: &AugmentedPlant, class: &MultiplierClass, rho: f64, cfg: &SolverConfig) -> Result<GainCertificate> {
    solve_gain(aug, class, rho, Variant::TerminalCost, false, cfg)
}

/// Smallest gain bound at `rho` with the pointwise output inequality and a
/// second multiplier (or the same one when `tie` is set).
pub fn gamma_star_pointwise(
    aug: &AugmentedPlant,
    class: &MultiplierClass,
    rho: f64,
    tie: bool,
    cfg: &SolverConfig,
) -> Result<GainCertificate> {
    if !class.pointwise() {
        return Err(Error::PointwiseRequired);
    }
    solve_gain(aug, class, rho, Variant::SplitMultiplier, tie, cfg)
}

pub fn rho_line_search(
    aug: &AugmentedPlant,
    class: &MultiplierClass,
    variant: Variant,
    tie: bool,
    grid: &SearchGrid,
    cfg: &SolverConfig,
) -> Result<Searched<GainCertificate>> {
    grid.validate("rho", (0.0, 1.0))?;
    if variant == Variant::SplitMultiplier && !class.pointwise() {
        return Err(Error::PointwiseRequired);
    }
    line_search(grid, |rho| solve_gain(aug, class, rho, variant, tie, cfg), |c| c.gamma)
}

/// Everything the gain analysis produces.
#[derive(Clone, Debug)]
pub struct GainAnalysis {
    pub certificate: GainCertificate,
    pub rho_trace: Vec<SearchPoint>,
    pub lambda_trace: Vec<SearchPoint>,
    pub l1_bracket: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainRequest {
    pub variant: Variant,
    /// Defaults to the natural class of the uncertainty.
    pub class: Option<ClassChoice>,
    pub nu: usize,
    pub rho_grid: SearchGrid,
    pub lambda_grid: SearchGrid,
    pub tie_multipliers: bool,
    pub config: SolverConfig,
}

impl Default for GainRequest {
    fn default() -> Self {
        Self {
            variant: Variant::TerminalCost,
            class: None,
            nu: 2,
            rho_grid: SearchGrid::rho_default(),
            lambda_grid: SearchGrid::lambda_default(),
            tie_multipliers: false,
            config: SolverConfig::default(),
        }
    }
}

/// Joint search over decay rate and basis pole (see [`joint_search`]).
/// Each pole rebuilds the filter and the augmented plant.
pub fn lambda_line_search(
    plant: &Plant,
    spec: &UncertaintySpec,
    nu: usize,
    variant: Variant,
    rho_grid: &SearchGrid,
    lambda_grid: &SearchGrid,
    cfg: &SolverConfig,
) -> Result<JointSearched<GainCertificate>> {
    rho_grid.validate("rho", (0.0, 1.0))?;
    lambda_grid.validate("lambda", (-1.0, 1.0))?;
    basis_filter(lambda_grid.lo, nu)?;
    joint_search(
        rho_grid,
        lambda_grid,
        |rho, lambda| {
            let class = build_class(spec, ClassChoice::Pti, Some(lambda), nu)?;
            let aug = augment(plant, class.filter())?;
            solve_gain(&aug, &class, rho, variant, false, cfg).map_err(|e| e.at_point(Some(rho), Some(lambda)))
        },
        |c| c.gamma,
    )
}

/// Rejects plants that some admissible constant uncertainty destabilises:
/// neither a finite gain nor a bounded reachable set exists for them.
fn require_vertex_stability(plant: &Plant, spec: &UncertaintySpec) -> Result<()> {
    let radius = vertex_spectral_radius(plant, spec)?;
    if radius >= 1.0 {
        return Err(Error::VertexUnstable { radius });
    }
    Ok(())
}

pub fn analyze_gain(plant: &Plant, spec: &UncertaintySpec, req: &GainRequest) -> Result<GainAnalysis> {
    require_vertex_stability(plant, spec)?;
    let choice = req.class.unwrap_or_else(|| ClassChoice::for_kind(spec.kind()));
    let (certificate, rho_trace, lambda_trace) = if choice.uses_basis() {
        let s = lambda_line_search(plant, spec, req.nu, req.variant, &req.rho_grid, &req.lambda_grid, &req.config)?;
        (s.best, s.rho_trace, s.lambda_trace)
    } else {
        let class = build_class(spec, choice, None, req.nu)?;
        let aug = augment(plant, class.filter())?;
        let s = rho_line_search(&aug, &class, req.variant, req.tie_multipliers, &req.rho_grid, &req.config)?;
        (s.best, s.trace, Vec::new())
    };
    let d = plant.dims();
    let l1_bracket = l1_bracket(certificate.gamma, d.nw, d.nz);
    Ok(GainAnalysis { certificate, rho_trace, lambda_trace, l1_bracket })
}

/// `(gamma / sqrt(n), sqrt(m) * gamma)` for `m` inputs and `n` outputs.
pub fn l1_bracket(gamma: f64, m: usize, n: usize) -> (f64, f64) {
    if m == 0 || n == 0 {
        return (0.0, 0.0);
    }
    (gamma / (n as f64).sqrt(), (m as f64).sqrt() * gamma)
}

/// Peak bound implied by a per-component bound: `sqrt(nw) * w_inf`.
pub fn w_peak_from_inf(w_inf: f64, nw: usize) -> f64 {
    w_inf * (nw as f64).sqrt()
}

/// Invariant ellipsoid `{x : x^T Qtilde x <= 1}` for disturbances with
/// `||w||_peak <= w_peak`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachCertificate {
    #[serde(with = "serde_mat")]
    pub q: Mat,
    #[serde(with = "serde_mat")]
    pub q_tilde: Mat,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<usize>,
    pub class: ClassChoice,
    pub w_peak: f64,
    /// `-log det(Qtilde)`.
    pub volume: f64,
    #[serde(with = "serde_mat::map")]
    pub values: BTreeMap<String, Mat>,
    pub stats: SolverStats,
    pub resubstitution_slack: f64,
    pub scale: f64,
}

impl ReachCertificate {
    /// Semi-axis lengths and directions (columns) of the ellipsoid.
    pub fn axes(&self) -> (Vec<f64>, Mat) {
        let eig = self.q_tilde.clone().symmetric_eigen();
        let lengths = eig.eigenvalues.iter().map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt()).collect();
        (lengths, eig.eigenvectors)
    }
}

fn log_det_pd(m: &Mat) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolverFailure { message: "ellipsoid matrix is not positive definite".into(), rho: None, lambda: None })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Maximises `log det Q` subject to the invariance conditions at `rho`.
pub fn maximize_volume(
    aug: &AugmentedPlant,
    class: &MultiplierClass,
    rho: f64,
    w_peak: f64,
    cfg: &SolverConfig,
) -> Result<ReachCertificate> {
    if !(w_peak > 0.0 && w_peak.is_finite()) {
        return Err(Error::InvalidArgument(format!("w_peak must be positive, got {w_peak}")));
    }
    if is_zero(&aug.bw) {
        return Err(Error::VolumeUnbounded);
    }
    let rp = build_reach_program(aug, class, rho, &ShapeMode::MaximizeVolume)?;
    let (prog, res, scale) = solve_rescaled(&rp.program, cfg)?;
    match res.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible),
        SolveStatus::Unbounded => return Err(Error::VolumeUnbounded),
        SolveStatus::NumericalLimit => unreachable!("reported as an error by solve"),
    }
    let a = res.assignment.expect("optimal result carries a point");
    let q = rp.q.eval(&a);
    let q_tilde = &q / (w_peak * w_peak);
    let volume = -log_det_pd(&q_tilde).map_err(|e| e.at_point(Some(rho), None))?;
    let slack = prog.worst_slack(&a)?.map_or(0.0, |(_, s)| s);
    Ok(ReachCertificate {
        q,
        q_tilde,
        rho,
        lambda: class.basis().map(|b| b.lambda()),
        nu: class.basis().map(|b| b.nu()),
        class: class_choice_of(class),
        w_peak,
        volume,
        values: prog.named_values(&a),
        stats: res.stats,
        resubstitution_slack: slack,
        scale,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachRequest {
    pub class: Option<ClassChoice>,
    pub nu: usize,
    pub rho_grid: SearchGrid,
    pub lambda_grid: SearchGrid,
    pub w_peak: f64,
    pub config: SolverConfig,
}

impl ReachRequest {
    pub fn new(w_peak: f64) -> Self {
        Self {
            class: None,
            nu: 2,
            rho_grid: SearchGrid::rho_default(),
            lambda_grid: SearchGrid::lambda_default(),
            w_peak,
            config: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReachAnalysis {
    pub certificate: ReachCertificate,
    pub rho_trace: Vec<SearchPoint>,
    pub lambda_trace: Vec<SearchPoint>,
}

pub fn reach_rho_line_search(
    aug: &AugmentedPlant,
    class: &MultiplierClass,
    w_peak: f64,
    grid: &SearchGrid,
    cfg: &SolverConfig,
) -> Result<Searched<ReachCertificate>> {
    grid.validate("rho", (0.0, 1.0))?;
    if is_zero(&aug.bw) {
        return Err(Error::VolumeUnbounded);
    }
    line_search(grid, |rho| maximize_volume(aug, class, rho, w_peak, cfg), |c| c.volume)
}

pub fn analyze_reach(plant: &Plant, spec: &UncertaintySpec, req: &ReachRequest) -> Result<ReachAnalysis> {
    require_vertex_stability(plant, spec)?;
    let choice = req.class.unwrap_or_else(|| ClassChoice::for_kind(spec.kind()));
    if choice.uses_basis() {
        req.rho_grid.validate("rho", (0.0, 1.0))?;
        req.lambda_grid.validate("lambda", (-1.0, 1.0))?;
        basis_filter(req.lambda_grid.lo, req.nu)?;
        if is_zero(plant.bw()) {
            return Err(Error::VolumeUnbounded);
        }
        let s = joint_search(
            &req.rho_grid,
            &req.lambda_grid,
            |rho, lambda| {
                let class = build_class(spec, choice, Some(lambda), req.nu)?;
                let aug = augment(plant, class.filter())?;
                maximize_volume(&aug, &class, rho, req.w_peak, &req.config).map_err(|e| e.at_point(Some(rho), Some(lambda)))
            },
            |c| c.volume,
        )?;
        Ok(ReachAnalysis { certificate: s.best, rho_trace: s.rho_trace, lambda_trace: s.lambda_trace })
    } else {
        let class = build_class(spec, choice, None, req.nu)?;
        let aug = augment(plant, class.filter())?;
        let s = reach_rho_line_search(&aug, &class, req.w_peak, &req.rho_grid, &req.config)?;
        Ok(ReachAnalysis { certificate: s.best, rho_trace: s.trace, lambda_trace: Vec::new() })
    }
}

/// Normalised slack of every constraint of the generating gain program at
/// the stored certificate values.
pub fn gain_resubstitution(aug: &AugmentedPlant, class: &MultiplierClass, cert: &GainCertificate) -> Result<Vec<(String, f64)>> {
    let prog = gain_program(aug, class, cert.rho, cert.variant, cert.tie_multipliers)?;
    let a = prog.assignment_from_named(&cert.values)?;
    prog.constraints()
        .iter()
        .map(|c| Ok((c.name.clone(), c.slack(&a)? / (1.0 + c.magnitude(&a)?))))
        .collect()
}

/// Same as [`gain_resubstitution`] for a reach certificate.
pub fn reach_resubstitution(aug: &AugmentedPlant, class: &MultiplierClass, cert: &ReachCertificate) -> Result<Vec<(String, f64)>> {
    let rp = build_reach_program(aug, class, cert.rho, &ShapeMode::MaximizeVolume)?;
    let a = rp.program.assignment_from_named(&cert.values)?;
    rp.program
        .constraints()
        .iter()
        .map(|c| Ok((c.name.clone(), c.slack(&a)? / (1.0 + c.magnitude(&a)?))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_rows, zeros};
    use crate::system::{make_plant, PlantBlocks, PlantDims};

    fn scalar_plant(a: f64) -> Plant {
        let d = PlantDims { nx: 1, np: 0, nq: 0, nw: 1, nz: 1 };
        let mut b = PlantBlocks::zeros(d);
        b.a = from_rows(&[&[a]]);
        b.bw = from_rows(&[&[1.0]]);
        b.cz = from_rows(&[&[1.0]]);
        make_plant(b, d).unwrap()
    }

    fn none_class() -> (MultiplierClass, UncertaintySpec) {
        let spec = UncertaintySpec::none();
        (class_norm_bounded(&spec).unwrap(), spec)
    }

    #[test]
    fn scalar_plant_at_half() {
        // x+ = 0.5 x + w, z = x: the bound at rho = 0.5 is exactly 2
        let plant = scalar_plant(0.5);
        let (class, _) = none_class();
        let aug = augment(&plant, class.filter()).unwrap();
        let c = gamma_star(&aug, &class, 0.5, &SolverConfig::default()).unwrap();
        assert!((c.gamma - 2.0).abs() < 1e-5, "{}", c.gamma);
        assert!(c.resubstitution_slack > -1e-6);
    }

    #[test]
    fn destabilising_uncertainty_is_rejected_before_solving() {
        let spec = UncertaintySpec::none();
        let req = GainRequest { rho_grid: SearchGrid::fixed(0.5), ..GainRequest::default() };
        match analyze_gain(&scalar_plant(1.5), &spec, &req) {
            Err(Error::VertexUnstable { radius }) => assert!((radius - 1.5).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        // x+ = 0.5 x + p, q = x: the vertex delta = 0.6 gives radius 1.1
        let d = PlantDims { nx: 1, np: 1, nq: 1, nw: 1, nz: 1 };
        let mut b = PlantBlocks::zeros(d);
        b.a = from_rows(&[&[0.5]]);
        b.bp = from_rows(&[&[1.0]]);
        b.cq = from_rows(&[&[1.0]]);
        b.bw = from_rows(&[&[1.0]]);
        b.cz = from_rows(&[&[1.0]]);
        let plant = make_plant(b, d).unwrap();
        let spec = UncertaintySpec::polytopic_time_invariant(vec![vec![-0.2], vec![0.6]]).unwrap();
        let req = ReachRequest::new(1.0);
        assert!(matches!(analyze_reach(&plant, &spec, &req), Err(Error::VertexUnstable { .. })));
    }

    #[test]
    fn zero_plant_has_zero_gain() {
        let d = PlantDims { nx: 2, np: 1, nq: 1, nw: 1, nz: 1 };
        let plant = make_plant(PlantBlocks::zeros(d), d).unwrap();
        let spec = UncertaintySpec::polytopic_time_varying(vec![vec![-1.0], vec![1.0]]).unwrap();
        let class = class_polytopic_tv(&spec).unwrap();
        let aug = augment(&plant, class.filter()).unwrap();
        let c = gamma_star(&aug, &class, 0.5, &SolverConfig::default()).unwrap();
        assert!(c.gamma < 1e-5, "{}", c.gamma);
        let c2 = gamma_star_pointwise(&aug, &class, 0.5, false, &SolverConfig::default()).unwrap();
        assert!(c2.gamma < 1e-5, "{}", c2.gamma);
    }

    #[test]
    fn pointwise_variant_needs_pointwise_class() {
        let spec = UncertaintySpec::polytopic_time_invariant(vec![vec![-0.1], vec![0.1]]).unwrap();
        let class = class_polytopic_ti(&spec, &basis_filter(0.2, 1).unwrap()).unwrap();
        let plant = scalar_plant(0.3);
        let d = PlantDims { nx: 1, np: 1, nq: 1, nw: 1, nz: 1 };
        let mut b = PlantBlocks::zeros(d);
        b.a = plant.a().clone();
        b.bw = plant.bw().clone();
        b.cz = plant.cz().clone();
        let plant = make_plant(b, d).unwrap();
        let aug = augment(&plant, class.filter()).unwrap();
        assert_eq!(
            gamma_star_pointwise(&aug, &class, 0.5, false, &SolverConfig::default()).unwrap_err(),
            Error::PointwiseRequired
        );
    }

    #[test]
    fn grid_values() {
        let g = SearchGrid::rho_default().values();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 0.02).abs() < 1e-15 && (g[24] - 0.98).abs() < 1e-12);
        let l = SearchGrid::lambda_default().values();
        assert!((l[9]).abs() < 1e-12 && (l[1] + 0.8).abs() < 1e-12);
        assert_eq!(SearchGrid::fixed(0.3).values(), vec![0.3]);
    }

    #[test]
    fn line_search_finds_parabola_minimum() {
        let grid = SearchGrid { lo: 0.0, hi: 1.0, points: 11, refine: 30, log: false };
        let s = line_search(&grid, |t| Ok((t - 0.37).powi(2)), |v| *v).unwrap();
        assert!((s.at - 0.37).abs() < 1e-5);
        let min = s.trace.iter().filter_map(|p| p.score).fold(f64::INFINITY, f64::min);
        assert_eq!(min, s.best);
    }

    #[test]
    fn line_search_skips_infeasible_points() {
        let grid = SearchGrid { lo: 0.0, hi: 1.0, points: 11, refine: 5, log: false };
        let s = line_search(&grid, |t| if t < 0.55 { Err(Error::Infeasible) } else { Ok(t) }, |v| *v).unwrap();
        assert!(s.at >= 0.55 && s.at <= 0.6 && s.best == s.at);
        let all = line_search(&grid, |_| -> Result<f64> { Err(Error::Infeasible) }, |v| *v);
        assert_eq!(all.unwrap_err(), Error::AllInfeasible);
        let hard = line_search(&grid, |_| -> Result<f64> { Err(Error::EmptyProgram) }, |v| *v);
        assert_eq!(hard.unwrap_err(), Error::EmptyProgram);
    }

    #[test]
    fn ties_go_to_smaller_argument() {
        let grid = SearchGrid { lo: 0.1, hi: 0.9, points: 9, refine: 0, log: false };
        let s = line_search(&grid, |_| Ok(1.0), |v| *v).unwrap();
        assert!((s.at - 0.1).abs() < 1e-12);
    }

    #[test]
    fn scalar_search_is_tight() {
        let plant = scalar_plant(0.5);
        let spec = UncertaintySpec::none();
        let req = GainRequest { class: Some(ClassChoice::Normbound), ..GainRequest::default() };
        let a = analyze_gain(&plant, &spec, &req).unwrap();
        assert!(a.certificate.gamma >= 2.0 - 1e-6 && a.certificate.gamma < 2.1, "{}", a.certificate.gamma);
    }

    #[test]
    fn l1_bracket_values() {
        let (lo, hi) = l1_bracket(60.61, 2, 2);
        assert!((hi - 85.7155).abs() < 1e-3 && (lo - 60.61 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(l1_bracket(3.0, 1, 1), (3.0, 3.0));
        assert_eq!(l1_bracket(0.0, 2, 3), (0.0, 0.0));
    }

    #[test]
    fn w_peak_conversion() {
        assert!((w_peak_from_inf(0.5, 2) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn scalar_reach_contains_exact_interval() {
        // x+ = a x + w, |w| <= 1: the reachable set is |x| < 1/(1-|a|)
        let a = 0.6;
        let plant = scalar_plant(a).without_performance();
        let (class, _) = none_class();
        let aug = augment(&plant, class.filter()).unwrap();
        let s = reach_rho_line_search(&aug, &class, 1.0, &SearchGrid::rho_default(), &SolverConfig::default()).unwrap();
        let radius = 1.0 / s.best.q_tilde[(0, 0)].sqrt();
        assert!(radius >= 1.0 / (1.0 - a) - 1e-6, "{radius}");
    }

    #[test]
    fn reach_without_disturbance_is_unbounded() {
        let d = PlantDims { nx: 1, np: 0, nq: 0, nw: 1, nz: 0 };
        let mut b = PlantBlocks::zeros(d);
        b.a = from_rows(&[&[0.5]]);
        let plant = make_plant(b, d).unwrap();
        let (class, _) = none_class();
        let aug = augment(&plant, class.filter()).unwrap();
        assert_eq!(
            maximize_volume(&aug, &class, 0.5, 1.0, &SolverConfig::default()).unwrap_err(),
            Error::VolumeUnbounded
        );
        assert!(is_zero(&zeros(1, 1)));
    }

    #[test]
    fn resubstitution_matches_solver_point() {
        let plant = scalar_plant(0.5);
        let (class, _) = none_class();
        let aug = augment(&plant, class.filter()).unwrap();
        let c = gamma_star(&aug, &class, 0.4, &SolverConfig::default()).unwrap();
        let slacks = gain_resubstitution(&aug, &class, &c).unwrap();
        assert!(slacks.iter().all(|(_, s)| *s > -1e-6), "{slacks:?}");
    }

    #[test]
    fn certificate_round_trips_through_json() {
        let plant = scalar_plant(0.5);
        let (class, _) = none_class();
        let aug = augment(&plant, class.filter()).unwrap();
        let c = gamma_star(&aug, &class, 0.4, &SolverConfig::default()).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: GainCertificate = serde_json::from_str(&s).unwrap();
        assert_eq!(back.variant, c.variant);
        assert_eq!(back.values.len(), c.values.len());
        assert!((back.gamma - c.gamma).abs() < 1e-12);
    }
}
