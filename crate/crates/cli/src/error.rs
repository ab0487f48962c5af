use std::path::Path;

use cavity_tomography::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const GENERIC: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const NON_CONVERGENCE: u8 = 4;
    pub const IDENTIFIABILITY: u8 = 5;
    pub const UNPHYSICAL: u8 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Core(e) => match e {
                Error::InvalidCavity(_)
                | Error::InvalidDetuning(_)
                | Error::InvalidConfig(_)
                | Error::InvalidEfficiency(_)
                | Error::DegeneratePhase { .. } => exit::CONFIG,
                Error::Io(_) | Error::MalformedTrace(_) | Error::NonPositiveShotNoise(_) => exit::IO,
                Error::NonConvergence { .. } => exit::NON_CONVERGENCE,
                Error::Unidentifiable(_) | Error::InsufficientCoverage(_) | Error::SingularNormalMatrix => {
                    exit::IDENTIFIABILITY
                }
                Error::NotPositiveDefinite
                | Error::UnphysicalCorrection(_)
                | Error::NonPositiveVariance { .. }
                | Error::StructureViolation { .. }
                | Error::NotSymmetric(_)
                | Error::TrivialPartition => exit::UNPHYSICAL,
                Error::DimensionMismatch { .. } => exit::GENERIC,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;
    use cavity_tomography::covariance::Param;

    #[test]
    fn error_kinds_map_to_distinct_codes() {
        let cases = [
            (CliError::Config("x".into()), exit::CONFIG),
            (CliError::Io { path: "p".into(), message: "m".into() }, exit::IO),
            (Error::InvalidConfig("x".into()).into(), exit::CONFIG),
            (Error::MalformedTrace("x".into()).into(), exit::IO),
            (Error::NonConvergence { iterations: 200, residual_norm: 1.0 }.into(), exit::NON_CONVERGENCE),
            (Error::Unidentifiable(vec![Param::Nu]).into(), exit::IDENTIFIABILITY),
            (Error::InsufficientCoverage("x".into()).into(), exit::IDENTIFIABILITY),
            (Error::NotPositiveDefinite.into(), exit::UNPHYSICAL),
            (Error::UnphysicalCorrection(0.5).into(), exit::UNPHYSICAL),
        ];
        for (e, expected) in cases {
            assert_eq!(e.exit_code(), expected, "{e}");
        }
        let codes = [exit::OK, exit::GENERIC, exit::CONFIG, exit::IO, exit::NON_CONVERGENCE, exit::IDENTIFIABILITY, exit::UNPHYSICAL];
        let mut sorted = codes.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
    }
}
