use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in block `{block}`: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        block: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("basis pole {0} must lie strictly inside (-1, 1)")]
    InvalidPole(f64),

    #[error("basis order {0} must be at least 1")]
    InvalidOrder(usize),

    #[error("filter is not exponentially stable (spectral radius {radius})")]
    UnstableFilter { radius: f64 },

    #[error("uncertainty kind mismatch: expected {expected}, found {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid uncertainty description: {0}")]
    InvalidUncertainty(String),

    #[error("this analysis requires a pointwise multiplier class")]
    PointwiseRequired,

    #[error("variable `{0}` declared twice")]
    DuplicateVariable(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("program has no decision variables")]
    EmptyProgram,

    #[error("solver failure{}: {message}", fmt_point(*rho, *lambda))]
    SolverFailure {
        message: String,
        rho: Option<f64>,
        lambda: Option<f64>,
    },

    #[error("problem is infeasible")]
    Infeasible,

    #[error("an admissible constant uncertainty destabilises the plant (closed-loop spectral radius {radius})")]
    VertexUnstable { radius: f64 },

    #[error("every line-search point was infeasible")]
    AllInfeasible,

    #[error("ellipsoid volume is unbounded (disturbance channel is identically zero)")]
    VolumeUnbounded,

    #[error("interconnection ill-posed at step {step}: condition number {condition:e}")]
    IllPosed { step: usize, condition: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { message: String, line: usize, column: usize },

    #[error("i/o error on `{path}`: {message}")]
    Io { path: String, message: String },
}

fn fmt_point(rho: Option<f64>, lambda: Option<f64>) -> String {
    match (rho, lambda) {
        (Some(r), Some(l)) => format!(" at rho = {r}, lambda = {l}"),
        (Some(r), None) => format!(" at rho = {r}"),
        (None, Some(l)) => format!(" at lambda = {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    /// Attach a line-search coordinate to a solver failure.
    pub fn at_point(self, rho: Option<f64>, lambda: Option<f64>) -> Self {
        match self {
            Error::SolverFailure {
                message,
                rho: r,
                lambda: l,
            } => Error::SolverFailure {
                message,
                rho: rho.or(r),
                lambda: lambda.or(l),
            },
            other => other,
        }
    }
}
