use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped by the exit-code classes used by the CLI:
/// validation problems, numerical failures and I/O.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("steady state did not converge after {iterations} iterations (last relative change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("requested displacement angle cannot be reached with the available drive (need |sin| = {required:.3})")]
    GammaUnreachable { required: f64 },

    #[error("angle is undefined: both numerator and denominator vanish")]
    DegenerateArgument,

    #[error("response matrix is numerically singular at omega = {omega:e} rad/s")]
    SingularAt { omega: f64 },

    #[error("homodyne phase undefined: mean output field vanishes")]
    UndefinedHomodynePhase,

    #[error("adaptive integration failed: {0}")]
    IntegrationFailure(String),

    #[error("a zero lies too close to the contour: {0}")]
    ContourAmbiguous(String),

    #[error("no stable point found in the search bounds")]
    NoStableRegion,

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("fit parameter `{0}` ran into its bound")]
    BasinEscape(String),

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

/// Broad error category, used to map onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter { .. } | Error::Config(_) | Error::Parse(_) => ErrorClass::Validation,
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Numerical,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::GammaUnreachable { .. } => "GammaUnreachable",
            Error::DegenerateArgument => "DegenerateArgument",
            Error::SingularAt { .. } => "SingularAt",
            Error::UndefinedHomodynePhase => "UndefinedHomodynePhase",
            Error::IntegrationFailure(_) => "IntegrationFailure",
            Error::ContourAmbiguous(_) => "ContourAmbiguous",
            Error::NoStableRegion => "NoStableRegion",
            Error::FitDiverged(_) => "FitDiverged",
            Error::BasinEscape(_) => "BasinEscape",
            Error::SingularCovariance => "SingularCovariance",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
            Error::Parse(_) => "Parse",
        }
    }

    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
