//! Command-line front end: `gain`, `reach` and `check`.
//!
//! Exit codes: 0 when a certificate was produced (or every check passed),
//! 2 when the problem is infeasible or a check fails, 1 on any error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    analyze_gain, analyze_reach, build_class, gain_resubstitution, reach_resubstitution, ClassChoice, GainCertificate,
    ReachCertificate, Variant,
};
use crate::error::{Error, Result};
use crate::io::{
    write_file, CertificateDoc, CheckResult, GainSummary, Outcome, Problem, ProblemFile, ReachSummary,
    Report, RequestKind,
};
use crate::iqc::{MultiplierClass, UncertaintySpec};
use crate::linalg::{Mat, Vector};
use crate::oracle::{
    dissipation_check, empirical_gain, gain_soundness_check, iqc_residual_check, random_delta, random_disturbance,
    reach_containment_check, simulate, DeltaRealization, DissipationData, EmpiricalOptions,
};
use crate::system::{augment, AugmentedPlant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NEGATIVE: i32 = 2;

/// Normalised re-substitution slack accepted by the `resubstitution` suite.
pub const RESUBSTITUTION_TOL: f64 = 1e-6;
/// Relative tolerance of the residual and dissipation suites.
pub const RELATIVE_TOL: f64 = 1e-6;
pub const RESIDUAL_DRAWS: usize = 50;
pub const RESIDUAL_HORIZON: usize = 40;
pub const DISSIPATION_TRIALS: usize = 50;
pub const DISSIPATION_HORIZON: usize = 60;
pub const GAIN_TRIALS: usize = 1000;
pub const GAIN_HORIZON: usize = 200;
pub const REACH_TRIALS: usize = 500;
pub const REACH_HORIZON: usize = 150;

#[derive(Debug, Parser)]
#[command(name = "iqc-peak", version, about = "Certified robust peak-to-peak gain and reachable-set bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Upper bound on the robust peak-to-peak gain.
    Gain(AnalyzeArgs),
    /// Invariant ellipsoid for bounded disturbances.
    Reach(AnalyzeArgs),
    /// Re-verify a stored certificate against its problem.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Accept unknown keys in input documents (reported as notices).
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the JSON report instead of the human rendering.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    pub problem: PathBuf,
    /// `thm1` (terminal cost) or `thm2` (split multipliers).
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub class: Option<ClassChoice>,
    #[arg(long)]
    pub nu: Option<usize>,
    /// `lo:hi:n[:refine]` or a single value.
    #[arg(long)]
    pub rho_grid: Option<String>,
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub scale: Option<f64>,
    /// Run the simulation cross-checks on the result.
    #[arg(long)]
    pub verify: bool,
    /// Write the certificate (all decision variables) here.
    #[arg(long)]
    pub cert_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    pub certificate: PathBuf,
    pub problem: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Parses arguments, runs the command, prints the report and returns the
/// exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let common = match &cli.command {
        Command::Gain(a) | Command::Reach(a) => a.common.clone(),
        Command::Check(a) => a.common.clone(),
    };
    match run(&cli.command) {
        Ok(report) => {
            if let Some(path) = &common.out {
                if let Err(e) = write_file(path, &report.to_json()) {
                    eprintln!("error: {e}");
                    return EXIT_ERROR;
                }
            }
            if common.json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.render());
            }
            exit_code(report.outcome)
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn exit_code(outcome: Outcome) -> i32 {
    match outcome {
        Outcome::Certified | Outcome::Pass => EXIT_OK,
        Outcome::Infeasible | Outcome::Fail => EXIT_NEGATIVE,
    }
}

pub fn run(command: &Command) -> Result<Report> {
    match command {
        Command::Gain(a) => cmd_gain(a),
        Command::Reach(a) => cmd_reach(a),
        Command::Check(a) => cmd_check(a),
    }
}

fn load_problem(path: &Path, lenient: bool) -> Result<Problem> {
    let (file, mut notices) = ProblemFile::load(path, !lenient)?;
    let mut problem = file.build()?;
    notices.append(&mut problem.notices);
    problem.notices = notices;
    Ok(problem)
}

fn expect_request(problem: &Problem, want: RequestKind) -> Result<()> {
    if problem.request != want {
        return Err(Error::InvalidArgument(format!(
            "problem requests `{}`, but the `{}` command was used",
            problem.request.label(),
            want.label()
        )));
    }
    Ok(())
}

/// Command-line flags take precedence over file options.
fn apply_flags(problem: &mut Problem, a: &AnalyzeArgs) {
    let o = &mut problem.options;
    o.variant = a.variant.or(o.variant);
    o.class = a.class.or(o.class);
    o.nu = a.nu.or(o.nu);
    o.rho_grid = a.rho_grid.clone().or(o.rho_grid.take());
    o.lambda_grid = a.lambda_grid.clone().or(o.lambda_grid.take());
    o.tol = a.tol.or(o.tol);
    o.scale = a.scale.or(o.scale);
    o.seed = a.common.seed.or(o.seed);
}

fn negative(command: RequestKind, problem: &Problem, seed: u64, notices: Vec<String>, start: Instant) -> Report {
    Report {
        command,
        problem: problem.name.clone(),
        outcome: Outcome::Infeasible,
        seed,
        gain: None,
        reach: None,
        checks: Vec::new(),
        notices,
        elapsed_s: start.elapsed().as_secs_f64(),
    }
}

fn cmd_gain(a: &AnalyzeArgs) -> Result<Report> {
    let start = Instant::now();
    let mut problem = load_problem(&a.problem, a.common.lenient)?;
    expect_request(&problem, RequestKind::Gain)?;
    apply_flags(&mut problem, a);
    let req = problem.gain_request()?;
    let seed = problem.seed();
    let mut notices = problem.notices.clone();
    let analysis = match analyze_gain(&problem.plant, &problem.spec, &req) {
        Ok(a) => a,
        Err(Error::Infeasible | Error::AllInfeasible) => {
            notices.push("no feasible decay rate on the search grid".into());
            return Ok(negative(RequestKind::Gain, &problem, seed, notices, start));
        }
        Err(e @ Error::VertexUnstable { .. }) => {
            notices.push(e.to_string());
            return Ok(negative(RequestKind::Gain, &problem, seed, notices, start));
        }
        Err(e) => return Err(e),
    };
    let cert = analysis.certificate;
    if let Some(path) = &a.cert_out {
        write_file(path, &CertificateDoc::Gain(cert.clone()).to_json())?;
    }
    let mut summary = GainSummary {
        gamma: cert.gamma,
        mu: cert.mu,
        rho: cert.rho,
        lambda: cert.lambda,
        nu: cert.nu,
        variant: cert.variant,
        class: cert.class,
        l1_lower: analysis.l1_bracket.0,
        l1_upper: analysis.l1_bracket.1,
        solver: cert.stats.clone(),
        resubstitution_slack: cert.resubstitution_slack,
        empirical_lower_bound: None,
        rho_trace: analysis.rho_trace,
        lambda_trace: analysis.lambda_trace,
    };
    let mut checks = Vec::new();
    if a.verify {
        let opts = EmpiricalOptions {
            initial_guess: problem.options.initial_guess.clone(),
            seed,
            ..EmpiricalOptions::default()
        };
        let emp = empirical_gain(&problem.plant, &problem.spec, &opts)?;
        summary.empirical_lower_bound = Some(emp.lower_bound);
        checks.push(CheckResult {
            suite: "empirical-below-certificate".into(),
            passed: emp.lower_bound <= cert.gamma * (1.0 + 1e-6),
            worst: emp.lower_bound,
            threshold: cert.gamma * (1.0 + 1e-6),
            detail: format!("worst case found with {}", emp.delta.describe()),
        });
        checks.extend(gain_checks(&problem, &cert, seed)?);
    }
    let outcome = if checks.iter().all(|c| c.passed) { Outcome::Certified } else { Outcome::Fail };
    Ok(Report {
        command: RequestKind::Gain,
        problem: problem.name.clone(),
        outcome,
        seed,
        gain: Some(summary),
        reach: None,
        checks,
        notices,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

fn cmd_reach(a: &AnalyzeArgs) -> Result<Report> {
    let start = Instant::now();
    let mut problem = load_problem(&a.problem, a.common.lenient)?;
    expect_request(&problem, RequestKind::Reach)?;
    apply_flags(&mut problem, a);
    let req = problem.reach_request()?;
    let seed = problem.seed();
    let plant = problem.plant.without_performance();
    let mut notices = problem.notices.clone();
    let analysis = match analyze_reach(&plant, &problem.spec, &req) {
        Ok(a) => a,
        Err(Error::Infeasible | Error::AllInfeasible) => {
            notices.push("no feasible decay rate on the search grid".into());
            return Ok(negative(RequestKind::Reach, &problem, seed, notices, start));
        }
        Err(e @ Error::VertexUnstable { .. }) => {
            notices.push(e.to_string());
            return Ok(negative(RequestKind::Reach, &problem, seed, notices, start));
        }
        Err(e) => return Err(e),
    };
    let cert = analysis.certificate;
    if let Some(path) = &a.cert_out {
        write_file(path, &CertificateDoc::Reach(cert.clone()).to_json())?;
    }
    let (axis_lengths, axis_directions) = cert.axes();
    let summary = ReachSummary {
        neg_log_det: cert.volume,
        rho: cert.rho,
        lambda: cert.lambda,
        nu: cert.nu,
        class: cert.class,
        w_peak: req.w_peak,
        q_tilde: cert.q_tilde.clone(),
        axis_lengths,
        axis_directions,
        solver: cert.stats.clone(),
        resubstitution_slack: cert.resubstitution_slack,
        rho_trace: analysis.rho_trace,
        lambda_trace: analysis.lambda_trace,
    };
    let checks = if a.verify { reach_checks(&problem, &cert, seed)? } else { Vec::new() };
    let outcome = if checks.iter().all(|c| c.passed) { Outcome::Certified } else { Outcome::Fail };
    Ok(Report {
        command: RequestKind::Reach,
        problem: problem.name.clone(),
        outcome,
        seed,
        gain: None,
        reach: Some(summary),
        checks,
        notices,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

fn cmd_check(a: &CheckArgs) -> Result<Report> {
    let start = Instant::now();
    let problem = load_problem(&a.problem, a.common.lenient)?;
    let doc = CertificateDoc::parse(&crate::io::read_file(&a.certificate)?)?;
    let seed = a.common.seed.or(problem.options.seed).unwrap_or(0);
    let checks = match &doc {
        CertificateDoc::Gain(c) => gain_checks(&problem, c, seed)?,
        CertificateDoc::Reach(c) => reach_checks(&problem, c, seed)?,
    };
    let outcome = if checks.iter().all(|c| c.passed) { Outcome::Pass } else { Outcome::Fail };
    Ok(Report {
        command: RequestKind::Check,
        problem: problem.name.clone(),
        outcome,
        seed,
        gain: None,
        reach: None,
        checks,
        notices: problem.notices.clone(),
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Class and augmented plant a certificate was computed with; fails on any
/// dimension mismatch with the problem.
fn rebuild(
    problem: &Problem,
    class: ClassChoice,
    lambda: Option<f64>,
    nu: Option<usize>,
    values: &std::collections::BTreeMap<String, Mat>,
    reach: bool,
) -> Result<(MultiplierClass, AugmentedPlant)> {
    let mc = build_class(&problem.spec, class, lambda, nu.unwrap_or(2))?;
    let plant = if reach { problem.plant.without_performance() } else { problem.plant.clone() };
    let aug = augment(&plant, mc.filter())?;
    let p = values.get("P").ok_or_else(|| Error::UnknownVariable("P".into()))?;
    if p.shape() != (aug.nchi(), aug.nchi()) {
        return Err(Error::DimensionMismatch { block: "P".into(), expected: (aug.nchi(), aug.nchi()), found: p.shape() });
    }
    let shapes = mc.var_shapes();
    if let Some(m) = values.get("M") {
        if m.shape() != (shapes.m, shapes.m) {
            return Err(Error::DimensionMismatch { block: "M".into(), expected: (shapes.m, shapes.m), found: m.shape() });
        }
    }
    Ok((mc, aug))
}

fn resubstitution_result(slacks: &[(String, f64)]) -> CheckResult {
    let (name, worst) = slacks
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, s)| (n.clone(), *s))
        .unwrap_or_else(|| ("none".into(), 0.0));
    CheckResult {
        suite: "resubstitution".into(),
        passed: worst >= -RESUBSTITUTION_TOL,
        worst,
        threshold: -RESUBSTITUTION_TOL,
        detail: format!("{} constraints, tightest `{name}`", slacks.len()),
    }
}

/// Vertex realisations first, then random admissible draws.
fn residual_deltas(spec: &UncertaintySpec, rng: &mut ChaCha8Rng, len: usize) -> Vec<DeltaRealization> {
    let mut out: Vec<DeltaRealization> =
        spec.vertices().iter().map(|v| DeltaRealization::Constant(v.iter().copied().collect())).collect();
    for _ in 0..RESIDUAL_DRAWS {
        out.push(random_delta(spec, rng, len));
    }
    out
}

fn iqc_residual_result(
    mc: &MultiplierClass,
    spec: &UncertaintySpec,
    multipliers: &[(Mat, Option<Mat>)],
    rho: f64,
    seed: u64,
) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0001);
    let nq = mc.filter().nq();
    let mut worst = f64::INFINITY;
    let mut ok = true;
    let mut runs = 0;
    for delta in residual_deltas(spec, &mut rng, RESIDUAL_HORIZON) {
        let q: Vec<Vector> =
            (0..RESIDUAL_HORIZON).map(|_| Vector::from_fn(nq, |_, _| rng.gen_range(-1.0..1.0))).collect();
        for (m, x) in multipliers {
            let r = iqc_residual_check(mc.filter(), m, x.as_ref(), rho, &delta, &q);
            let normalised = r.min / (1.0 + r.magnitude);
            worst = worst.min(normalised);
            ok &= r.min >= -RELATIVE_TOL * (1.0 + r.magnitude);
            runs += 1;
        }
    }
    CheckResult {
        suite: "iqc-residual".into(),
        passed: ok,
        worst: if worst.is_finite() { worst } else { 0.0 },
        threshold: -RELATIVE_TOL,
        detail: format!("{runs} runs, horizon {RESIDUAL_HORIZON}"),
    }
}

fn dissipation_result(problem: &Problem, aug: &AugmentedPlant, data: &DissipationData<'_>, w_peak: f64, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0002);
    let plant = if data.gamma.is_none() { problem.plant.without_performance() } else { problem.plant.clone() };
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    let mut used = 0;
    for i in 0..DISSIPATION_TRIALS {
        let delta = random_delta(&problem.spec, &mut rng, DISSIPATION_HORIZON);
        let w = random_disturbance(&mut rng, plant.dims().nw, DISSIPATION_HORIZON, w_peak, i);
        let traj = match simulate(&plant, None, &delta, &w) {
            Ok(t) => t,
            Err(Error::IllPosed { .. }) => continue,
            Err(e) => return Err(e),
        };
        let r = dissipation_check(aug, data, &traj);
        worst = worst.max(r.max_violation / (1.0 + r.magnitude));
        ok &= r.max_violation <= RELATIVE_TOL * (1.0 + r.magnitude);
        used += 1;
    }
    Ok(CheckResult {
        suite: "dissipation".into(),
        passed: ok && used > 0,
        worst: if worst.is_finite() { worst } else { 0.0 },
        threshold: RELATIVE_TOL,
        detail: format!("{used} trajectories, horizon {DISSIPATION_HORIZON}"),
    })
}

/// Re-substitution, IQC residual, dissipation and Monte-Carlo soundness of
/// a gain certificate.
pub fn gain_checks(problem: &Problem, cert: &GainCertificate, seed: u64) -> Result<Vec<CheckResult>> {
    let (mc, aug) = rebuild(problem, cert.class, cert.lambda, cert.nu, &cert.values, false)?;
    let mut checks = vec![resubstitution_result(&gain_resubstitution(&aug, &mc, cert)?)];

    let (m, x) = mc.multiplier_values(cert.rho, &cert.values, "")?;
    let x_opt = (!mc.pointwise()).then(|| x.clone());
    let mut multipliers = vec![(m.clone(), x_opt.clone())];
    let m2 = if cert.variant == Variant::SplitMultiplier && !cert.tie_multipliers {
        let (m2, _) = mc.multiplier_values(cert.rho, &cert.values, "2")?;
        multipliers.push((m2.clone(), None));
        Some(m2)
    } else {
        None
    };
    checks.push(iqc_residual_result(&mc, &problem.spec, &multipliers, cert.rho, seed));

    let p = cert.value("P")?;
    let data = DissipationData {
        p,
        m: &m,
        x: match cert.variant {
            Variant::TerminalCost => Some(&x),
            Variant::SplitMultiplier => None,
        },
        m2: m2.as_ref(),
        mu: cert.mu,
        gamma: Some(cert.gamma),
        rho: cert.rho,
    };
    checks.push(dissipation_result(problem, &aug, &data, 1.0, seed)?);

    let mc_summary = gain_soundness_check(&problem.plant, &problem.spec, cert.gamma, GAIN_TRIALS, GAIN_HORIZON, seed)?;
    checks.push(CheckResult::from_monte_carlo("gain-soundness", &mc_summary));
    Ok(checks)
}

/// Re-substitution, IQC residual, dissipation and containment of a reach
/// certificate.
pub fn reach_checks(problem: &Problem, cert: &ReachCertificate, seed: u64) -> Result<Vec<CheckResult>> {
    let (mc, aug) = rebuild(problem, cert.class, cert.lambda, cert.nu, &cert.values, true)?;
    let nx = problem.plant.dims().nx;
    if cert.q_tilde.shape() != (nx, nx) {
        return Err(Error::DimensionMismatch { block: "Qtilde".into(), expected: (nx, nx), found: cert.q_tilde.shape() });
    }
    let mut checks = vec![resubstitution_result(&reach_resubstitution(&aug, &mc, cert)?)];
    let (m, x) = mc.multiplier_values(cert.rho, &cert.values, "")?;
    let x_opt = (!mc.pointwise()).then(|| x.clone());
    checks.push(iqc_residual_result(&mc, &problem.spec, &[(m.clone(), x_opt)], cert.rho, seed));
    let p = cert.values.get("P").ok_or_else(|| Error::UnknownVariable("P".into()))?;
    let data = DissipationData { p, m: &m, x: Some(&x), m2: None, mu: 1.0 - cert.rho, gamma: None, rho: cert.rho };
    checks.push(dissipation_result(problem, &aug, &data, cert.w_peak, seed)?);
    let s = reach_containment_check(
        &problem.plant,
        &problem.spec,
        &cert.q_tilde,
        cert.w_peak,
        REACH_TRIALS,
        REACH_HORIZON,
        seed,
    )?;
    checks.push(CheckResult::from_monte_carlo("reach-containment", &s));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "iqc-peak",
            "gain",
            "p.json",
            "--variant",
            "thm2",
            "--class",
            "ptv",
            "--rho-grid",
            "0.1:0.9:9",
            "--verify",
            "--seed",
            "7",
        ])
        .unwrap();
        let Command::Gain(a) = cli.command else { panic!("expected gain") };
        assert_eq!(a.variant, Some(Variant::SplitMultiplier));
        assert_eq!(a.class, Some(ClassChoice::Ptv));
        assert_eq!(a.rho_grid.as_deref(), Some("0.1:0.9:9"));
        assert!(a.verify);
        assert_eq!(a.common.seed, Some(7));
    }

    #[test]
    fn check_takes_two_paths() {
        let cli = Cli::try_parse_from(["iqc-peak", "check", "c.json", "p.json", "--lenient"]).unwrap();
        let Command::Check(a) = cli.command else { panic!("expected check") };
        assert_eq!(a.certificate, PathBuf::from("c.json"));
        assert!(a.common.lenient);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(Outcome::Certified), 0);
        assert_eq!(exit_code(Outcome::Pass), 0);
        assert_eq!(exit_code(Outcome::Infeasible), 2);
        assert_eq!(exit_code(Outcome::Fail), 2);
        assert_eq!(main_with_args(["iqc-peak", "gain", "/nonexistent/problem.json"]), 1);
        assert_eq!(main_with_args(["iqc-peak", "bogus"]), 1);
    }
}
