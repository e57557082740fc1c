//! JSON documents: problem files, certificate files and reports.
//!
//! Matrices are nested arrays in row-major order. Problem files are parsed
//! strictly by default (unknown keys are errors); lenient parsing turns them
//! into warnings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    ClassChoice, GainCertificate, GainRequest, ReachCertificate, ReachRequest, SearchGrid, SearchPoint, SolverConfig,
    Variant,
};
use crate::error::{Error, Result};
use crate::iqc::UncertaintySpec;
use crate::linalg::{serde_mat, zeros, Mat};
use crate::oracle::MonteCarloSummary;
use crate::sdp::{SolveOptions, SolverStats};
use crate::system::{make_plant, Plant, PlantBlocks, PlantDims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Gain,
    Reach,
    Check,
}

impl RequestKind {
    pub fn label(self) -> &'static str {
        match self {
            RequestKind::Gain => "gain",
            RequestKind::Reach => "reach",
            RequestKind::Check => "check",
        }
    }
}

/// Plant blocks as stored in a file. Missing blocks are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantDoc {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Bp", default, skip_serializing_if = "Option::is_none")]
    pub bp: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Bw", default, skip_serializing_if = "Option::is_none")]
    pub bw: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Cq", default, skip_serializing_if = "Option::is_none")]
    pub cq: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Dqp", default, skip_serializing_if = "Option::is_none")]
    pub dqp: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Dqw", default, skip_serializing_if = "Option::is_none")]
    pub dqw: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Cz", default, skip_serializing_if = "Option::is_none")]
    pub cz: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Dzp", default, skip_serializing_if = "Option::is_none")]
    pub dzp: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Dzw", default, skip_serializing_if = "Option::is_none")]
    pub dzw: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyKindDoc {
    PolytopicTimeVarying,
    PolytopicTimeInvariant,
    NormBounded,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyDoc {
    pub kind: UncertaintyKindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<Vec<f64>>>,
    /// Bound on the gain of norm-bounded uncertainty (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_bound: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptionsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<usize>,
    /// `"lo:hi:n"`, `"lo:hi:n:refine"` or a single value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_peak: Option<f64>,
    /// Per-component bound; converted to `w_peak = sqrt(nw) w_inf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_inf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_multipliers: Option<bool>,
    /// Starting point of the worst-case parameter search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub request: RequestKind,
    pub dims: PlantDims,
    pub plant: PlantDoc,
    pub uncertainty: UncertaintyDoc,
    #[serde(default)]
    pub options: OptionsDoc,
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse { message: e.to_string(), line: e.line(), column: e.column() }
}

/// Deserialises `text`, collecting the paths of keys the schema does not
/// know. Strict mode turns the first such key into an error.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, strict: bool) -> Result<(T, Vec<String>)> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_ignored::deserialize(&mut de, |path| unknown.push(path.to_string())).map_err(json_error)?;
    de.end().map_err(json_error)?;
    if strict {
        if let Some(first) = unknown.first() {
            return Err(Error::Parse { message: format!("unknown key `{first}`"), line: 0, column: 0 });
        }
    }
    Ok((value, unknown.into_iter().map(|k| format!("ignored unknown key `{k}`")).collect()))
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Parses `"lo:hi:n"`, `"lo:hi:n:refine"` or `"v"`.
pub fn parse_grid(text: &str, default: SearchGrid) -> Result<SearchGrid> {
    let bad = || Error::InvalidArgument(format!("malformed grid `{text}` (expected lo:hi:n[:refine] or a single value)"));
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match parts.as_slice() {
        [v] => Ok(SearchGrid::fixed(num(v)?)),
        [lo, hi, n] | [lo, hi, n, _] => {
            let (lo, hi, n) = (num(lo)?, num(hi)?, int(n)?);
            let refine = if parts.len() == 4 { int(parts[3])? } else { default.refine };
            if n == 1 && lo == hi {
                return Ok(SearchGrid::fixed(lo));
            }
            if n < 2 {
                return Err(bad());
            }
            Ok(SearchGrid { lo, hi, points: n, refine, log: default.log && lo > 0.0 })
        }
        _ => Err(bad()),
    }
}

fn block(name: &str, raw: &Option<Vec<Vec<f64>>>, rows: usize, cols: usize) -> Result<Mat> {
    match raw {
        None => Ok(zeros(rows, cols)),
        Some(r) if r.is_empty() && rows * cols == 0 => Ok(zeros(rows, cols)),
        Some(r) => serde_mat::from_rows(r).map_err(|e| Error::InvalidArgument(format!("block `{name}`: {e}"))),
    }
}

/// Validated contents of a problem file.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: Option<String>,
    pub request: RequestKind,
    pub plant: Plant,
    pub spec: UncertaintySpec,
    pub options: OptionsDoc,
    pub notices: Vec<String>,
}

impl ProblemFile {
    pub fn parse(text: &str, strict: bool) -> Result<(Self, Vec<String>)> {
        parse_json(text, strict)
    }

    pub fn load(path: &Path, strict: bool) -> Result<(Self, Vec<String>)> {
        Self::parse(&read_file(path)?, strict)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem documents always serialise")
    }

    pub fn build(&self) -> Result<Problem> {
        let d = self.dims;
        let p = &self.plant;
        let mut blocks = PlantBlocks {
            a: block("A", &p.a, d.nx, d.nx)?,
            bp: block("Bp", &p.bp, d.nx, d.np)?,
            bw: block("Bw", &p.bw, d.nx, d.nw)?,
            cq: block("Cq", &p.cq, d.nq, d.nx)?,
            dqp: block("Dqp", &p.dqp, d.nq, d.np)?,
            dqw: block("Dqw", &p.dqw, d.nq, d.nw)?,
            cz: block("Cz", &p.cz, d.nz, d.nx)?,
            dzp: block("Dzp", &p.dzp, d.nz, d.np)?,
            dzw: block("Dzw", &p.dzw, d.nz, d.nw)?,
        };
        let u = &self.uncertainty;
        let spec = match u.kind {
            UncertaintyKindDoc::PolytopicTimeVarying | UncertaintyKindDoc::PolytopicTimeInvariant => {
                let vs = u.vertices.clone().ok_or_else(|| Error::InvalidUncertainty("polytopic kinds need `vertices`".into()))?;
                if u.gain_bound.is_some() {
                    return Err(Error::InvalidUncertainty("`gain_bound` applies to norm-bounded uncertainty only".into()));
                }
                let spec = if u.kind == UncertaintyKindDoc::PolytopicTimeVarying {
                    UncertaintySpec::polytopic_time_varying(vs)?
                } else {
                    UncertaintySpec::polytopic_time_invariant(vs)?
                };
                if spec.nq() != d.nq || spec.np() != d.np {
                    return Err(Error::InvalidUncertainty(format!(
                        "vertices have length {}, but nq = {} and np = {}",
                        spec.nq(),
                        d.nq,
                        d.np
                    )));
                }
                spec
            }
            UncertaintyKindDoc::NormBounded => {
                if u.vertices.is_some() {
                    return Err(Error::InvalidUncertainty("norm-bounded uncertainty takes no vertices".into()));
                }
                let g = u.gain_bound.unwrap_or(1.0);
                if !(g > 0.0 && g.is_finite()) {
                    return Err(Error::InvalidUncertainty(format!("gain bound must be positive, got {g}")));
                }
                // absorb the bound into the q-channel
                blocks.cq *= g;
                blocks.dqp *= g;
                blocks.dqw *= g;
                UncertaintySpec::norm_bounded(d.nq, d.np)
            }
            UncertaintyKindDoc::None => {
                if d.np != 0 || d.nq != 0 {
                    return Err(Error::InvalidUncertainty("kind `none` requires np = nq = 0".into()));
                }
                UncertaintySpec::none()
            }
        };
        let plant = make_plant(blocks, d)?;
        let mut notices = Vec::new();
        if let (Some(_), Some(_)) = (self.options.w_peak, self.options.w_inf) {
            return Err(Error::InvalidArgument("give either `w_peak` or `w_inf`, not both".into()));
        }
        if self.request == RequestKind::Reach && d.nz > 0 {
            notices.push("performance output z is ignored by the reachability analysis".into());
        }
        Ok(Problem { name: self.name.clone(), request: self.request, plant, spec, options: self.options.clone(), notices })
    }
}

impl Problem {
    /// Disturbance peak bound from the options (`w_inf` is converted).
    pub fn w_peak(&self) -> Option<f64> {
        self.options
            .w_peak
            .or_else(|| self.options.w_inf.map(|w| crate::analysis::w_peak_from_inf(w, self.plant.dims().nw)))
    }

    pub fn seed(&self) -> u64 {
        self.options.seed.unwrap_or(0)
    }

    pub fn class(&self) -> ClassChoice {
        self.options.class.unwrap_or_else(|| ClassChoice::for_kind(self.spec.kind()))
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let o = &self.options;
        let mut solve = SolveOptions::default();
        if let Some(t) = o.tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1), got {t}")));
            }
            solve = SolveOptions { max_iter: solve.max_iter, ..SolveOptions::with_tol(t) };
        }
        if let Some(m) = o.max_iter {
            solve.max_iter = m;
        }
        let scale = o.scale.unwrap_or(1.0);
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        Ok(SolverConfig { solve, scale })
    }

    fn grids(&self) -> Result<(SearchGrid, SearchGrid)> {
        let grid = |text: &Option<String>, default: SearchGrid| match text {
            Some(t) => parse_grid(t, default),
            None => Ok(default),
        };
        Ok((
            grid(&self.options.rho_grid, SearchGrid::rho_default())?,
            grid(&self.options.lambda_grid, SearchGrid::lambda_default())?,
        ))
    }

    /// Gain analysis settings from the options, with defaults filled in.
    pub fn gain_request(&self) -> Result<GainRequest> {
        let (rho_grid, lambda_grid) = self.grids()?;
        Ok(GainRequest {
            variant: self.options.variant.unwrap_or(Variant::TerminalCost),
            class: Some(self.class()),
            nu: self.options.nu.unwrap_or(2),
            rho_grid,
            lambda_grid,
            tie_multipliers: self.options.tie_multipliers.unwrap_or(false),
            config: self.solver_config()?,
        })
    }

    pub fn reach_request(&self) -> Result<ReachRequest> {
        let (rho_grid, lambda_grid) = self.grids()?;
        let w_peak = self
            .w_peak()
            .ok_or_else(|| Error::InvalidArgument("reach problems need `w_peak` or `w_inf` in options".into()))?;
        Ok(ReachRequest {
            class: Some(self.class()),
            nu: self.options.nu.unwrap_or(2),
            rho_grid,
            lambda_grid,
            w_peak,
            config: self.solver_config()?,
        })
    }
}

/// A stored certificate of either kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "certificate", rename_all = "lowercase")]
pub enum CertificateDoc {
    Gain(GainCertificate),
    Reach(ReachCertificate),
}

impl CertificateDoc {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(json_error)
    }
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificates always serialise")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSummary {
    pub gamma: f64,
    pub mu: f64,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<usize>,
    pub variant: Variant,
    pub class: ClassChoice,
    pub l1_lower: f64,
    pub l1_upper: f64,
    pub solver: SolverStats,
    pub resubstitution_slack: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical_lower_bound: Option<f64>,
    #[serde(default)]
    pub rho_trace: Vec<SearchPoint>,
    #[serde(default)]
    pub lambda_trace: Vec<SearchPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachSummary {
    pub neg_log_det: f64,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<usize>,
    pub class: ClassChoice,
    pub w_peak: f64,
    #[serde(with = "serde_mat")]
    pub q_tilde: Mat,
    pub axis_lengths: Vec<f64>,
    #[serde(with = "serde_mat")]
    pub axis_directions: Mat,
    pub solver: SolverStats,
    pub resubstitution_slack: f64,
    #[serde(default)]
    pub rho_trace: Vec<SearchPoint>,
    #[serde(default)]
    pub lambda_trace: Vec<SearchPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub passed: bool,
    /// Worst observed statistic.
    pub worst: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn from_monte_carlo(suite: &str, s: &MonteCarloSummary) -> Self {
        Self {
            suite: suite.into(),
            passed: s.passed,
            worst: s.worst,
            threshold: s.threshold,
            detail: format!("{} trials, horizon {}, {} ill-posed", s.trials, s.horizon, s.ill_posed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Certified,
    Infeasible,
    Pass,
    Fail,
}

/// Machine-readable result of a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    pub outcome: Outcome,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<GainSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reach: Option<ReachSummary>,
    #[serde(default)]
    pub checks: Vec<CheckResult>,
    #[serde(default)]
    pub notices: Vec<String>,
    pub elapsed_s: f64,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialise")
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(json_error)
    }

    /// Human-readable rendering. Every number printed here is a field of
    /// the machine document, printed with full precision.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command: {}", self.command.label());
        if let Some(p) = &self.problem {
            let _ = writeln!(out, "problem: {p}");
        }
        let _ = writeln!(out, "outcome: {:?}", self.outcome);
        let _ = writeln!(out, "seed: {}", self.seed);
        if let Some(g) = &self.gain {
            let _ = writeln!(out, "gain bound gamma: {}", g.gamma);
            let _ = writeln!(out, "  mu: {}", g.mu);
            let _ = writeln!(out, "  rho: {}", g.rho);
            if let Some(l) = g.lambda {
                let _ = writeln!(out, "  lambda: {l}");
            }
            if let Some(n) = g.nu {
                let _ = writeln!(out, "  nu: {n}");
            }
            let _ = writeln!(out, "  variant: {}, class: {}", g.variant.label(), g.class.label());
            let _ = writeln!(out, "  l1 bracket: [{}, {}]", g.l1_lower, g.l1_upper);
            if let Some(e) = g.empirical_lower_bound {
                let _ = writeln!(out, "  empirical lower bound: {e}");
            }
            let _ = writeln!(out, "  resubstitution slack: {}", g.resubstitution_slack);
            let _ = writeln!(out, "  solver iterations: {}", g.solver.iterations);
        }
        if let Some(r) = &self.reach {
            let _ = writeln!(out, "ellipsoid -log det(Qtilde): {}", r.neg_log_det);
            let _ = writeln!(out, "  rho: {}", r.rho);
            if let Some(l) = r.lambda {
                let _ = writeln!(out, "  lambda: {l}");
            }
            if let Some(n) = r.nu {
                let _ = writeln!(out, "  nu: {n}");
            }
            let _ = writeln!(out, "  class: {}", r.class.label());
            let _ = writeln!(out, "  w_peak: {}", r.w_peak);
            for (i, len) in r.axis_lengths.iter().enumerate() {
                let dir: Vec<String> = r.axis_directions.column(i).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "  axis {}: length {len}, direction [{}]", i + 1, dir.join(", "));
            }
            let _ = writeln!(out, "  resubstitution slack: {}", r.resubstitution_slack);
            let _ = writeln!(out, "  solver iterations: {}", r.solver.iterations);
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "check {}: {} (worst {}, threshold {}; {})",
                c.suite,
                if c.passed { "pass" } else { "FAIL" },
                c.worst,
                c.threshold,
                c.detail
            );
        }
        for n in &self.notices {
            let _ = writeln!(out, "notice: {n}");
        }
        let _ = writeln!(out, "elapsed: {} s", self.elapsed_s);
        out
    }
}

/// Named matrices of a certificate in a stable order, for display.
pub fn certificate_values(doc: &CertificateDoc) -> &BTreeMap<String, Mat> {
    match doc {
        CertificateDoc::Gain(c) => &c.values,
        CertificateDoc::Reach(c) => &c.values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "name": "small",
        "request": "gain",
        "dims": {"nx": 1, "np": 1, "nq": 1, "nw": 1, "nz": 1},
        "plant": {"A": [[0.5]], "Bp": [[0.1]], "Bw": [[1.0]], "Cq": [[1.0]], "Cz": [[1.0]]},
        "uncertainty": {"kind": "polytopic-time-varying", "vertices": [[-0.5], [0.5]]},
        "options": {"rho_grid": "0.1:0.9:9"}
    }"#;

    #[test]
    fn parses_and_builds() {
        let (f, warnings) = ProblemFile::parse(SMALL, true).unwrap();
        assert!(warnings.is_empty());
        let p = f.build().unwrap();
        assert_eq!(p.plant.dims().nx, 1);
        assert_eq!(p.plant.dqp()[(0, 0)], 0.0);
        let g = parse_grid(p.options.rho_grid.as_deref().unwrap(), SearchGrid::rho_default()).unwrap();
        assert_eq!((g.points, g.refine), (9, 12));
    }

    #[test]
    fn unknown_keys_strict_and_lenient() {
        let text = SMALL.replace("\"name\": \"small\",", "\"name\": \"small\", \"colour\": 3,");
        assert!(matches!(ProblemFile::parse(&text, true).unwrap_err(), Error::Parse { .. }));
        let (_, warnings) = ProblemFile::parse(&text, false).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("colour"));
    }

    #[test]
    fn malformed_dims_name_the_block() {
        let text = SMALL.replace("\"Bw\": [[1.0]]", "\"Bw\": [[1.0, 2.0]]");
        let (f, _) = ProblemFile::parse(&text, true).unwrap();
        match f.build().unwrap_err() {
            Error::DimensionMismatch { block, .. } => assert_eq!(block, "Bw"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        match ProblemFile::parse("{\n  \"request\": gain\n}", true).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn grid_strings() {
        assert_eq!(parse_grid("0.96", SearchGrid::rho_default()).unwrap(), SearchGrid::fixed(0.96));
        let g = parse_grid("-0.9:0.9:19:4", SearchGrid::lambda_default()).unwrap();
        assert_eq!((g.points, g.refine, g.log), (19, 4, false));
        assert!(parse_grid("0.1:0.9", SearchGrid::rho_default()).is_err());
        assert!(parse_grid("a:b:c", SearchGrid::rho_default()).is_err());
        assert!(parse_grid("0.1:0.9:1", SearchGrid::rho_default()).is_err());
    }

    #[test]
    fn w_inf_conversion_recorded() {
        let text = SMALL.replace("\"rho_grid\": \"0.1:0.9:9\"", "\"w_inf\": 0.5");
        let p = ProblemFile::parse(&text, true).unwrap().0.build().unwrap();
        assert!((p.w_peak().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gain_bound_is_absorbed() {
        let text = SMALL.replace(
            "{\"kind\": \"polytopic-time-varying\", \"vertices\": [[-0.5], [0.5]]}",
            "{\"kind\": \"norm-bounded\", \"gain_bound\": 2.0}",
        );
        let p = ProblemFile::parse(&text, true).unwrap().0.build().unwrap();
        assert_eq!(p.plant.cq()[(0, 0)], 2.0);
    }
}
