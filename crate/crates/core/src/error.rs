use thiserror::Error;

use crate::covariance::Param;

/// Errors produced anywhere in the tomography pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid cavity parameters: {0}")]
    InvalidCavity(String),

    #[error("detuning must be finite, got {0}")]
    InvalidDetuning(f64),

    #[error("carrier reflection vanishes at detuning {detuning}; sideband phase reference is undefined")]
    DegeneratePhase { detuning: f64 },

    #[error("variance parameter {param} must be positive, got {value}")]
    NonPositiveVariance { param: Param, value: f64 },

    #[error("matrix does not follow the sideband covariance structure (residual {residual:.3e} > tolerance {tolerance:.1e})")]
    StructureViolation { residual: f64, tolerance: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shot-noise reference is not positive after electronic-noise subtraction ({0:.3e})")]
    NonPositiveShotNoise(f64),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("partition must contain at least one mode and leave at least one out")]
    TrivialPartition,

    #[error("efficiency must lie in (0, 1], got {0}")]
    InvalidEfficiency(f64),

    #[error("loss correction at efficiency {0} yields a matrix that is not positive definite")]
    UnphysicalCorrection(f64),

    #[error("fit did not converge after {iterations} iterations (residual norm {residual_norm:.6e})")]
    NonConvergence { iterations: usize, residual_norm: f64 },

    #[error("parameters not identifiable from the supplied curves: {}", format_params(.0))]
    Unidentifiable(Vec<Param>),

    #[error("normal matrix is singular")]
    SingularNormalMatrix,

    #[error("insufficient sweep coverage: {0}")]
    InsufficientCoverage(String),

    #[error("malformed trace data: {0}")]
    MalformedTrace(String),

    #[error("i/o error: {0}")]
    Io(String),
}

fn format_params(params: &[Param]) -> String {
    params
        .iter()
        .map(|p| p.name())
        .collect::<Vec<_>>()
        .join(", ")
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
