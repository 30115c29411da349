use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("grid too coarse: n = {n}, need at least 8 interior points per axis")]
    GridTooCoarse { n: usize },
    #[error("ellipticity violated at x = {x:?}: a = {value} outside [{lower}, {upper}]")]
    EllipticityViolation {
        x: Vec<f64>,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("symmetric eigensolver did not converge")]
    ConvergenceFailure,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("subdomain contains no grid nodes")]
    EmptySubdomain,
    #[error("Gram matrix is numerically degenerate: min eigenvalue {min_eigenvalue:e} <= {threshold:e}")]
    DegenerateGram { min_eigenvalue: f64, threshold: f64 },
    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),
    #[error("field is not finite at x = {x:?}, t = {t}")]
    NonFiniteField { x: Vec<f64>, t: f64 },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("implicit step matrix is singular at step {step} (pivot {pivot:e})")]
    SingularStep { step: usize, pivot: f64 },
    #[error("Lebesgue exponent q = {q} must exceed {min}")]
    BadExponent { q: f64, min: f64 },
    #[error("tail block is rank deficient (null-space dimension {nullity}, max defect {max_defect:e})")]
    ResonantTail { nullity: usize, max_defect: f64 },
    #[error("no head size K makes the tail block contract by the requested margin")]
    NoAdmissibleK,
    #[error("control map is near singular: sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e}")]
    NearSingular { sigma_min: f64, sigma_max: f64 },
    #[error("perturbation too large: control map sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e}")]
    PerturbationTooLarge { sigma_min: f64, sigma_max: f64 },
    #[error("periodicity residual {residual:e} exceeds tolerance {tolerance:e}")]
    ResidualCheckFailed { residual: f64, tolerance: f64 },
    #[error("eigenvalue bound violated: |lambda_e| = {abs_lambda:e} > {bound:e}")]
    BoundViolated { abs_lambda: f64, bound: f64 },
    #[error("invalid localization: {0}")]
    InvalidLocalization(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
