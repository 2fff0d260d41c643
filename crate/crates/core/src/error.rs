use thiserror::Error;

/// Errors produced by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("pose sampling for plane {plane} failed after {attempts} attempts ({found} of {requested} poses found)")]
    SamplingFailed {
        plane: usize,
        attempts: usize,
        found: usize,
        requested: usize,
    },

    #[error("only {available} of {requested} scan rays hit plane {plane} inside its extent")]
    InsufficientRays {
        plane: usize,
        available: usize,
        requested: usize,
    },

    #[error("residual vector is not finite at the starting point")]
    NonFiniteResidual,

    #[error("normal equations are singular at iteration {iteration} (damping {damping:e})")]
    SingularNormalEquations { iteration: usize, damping: f64 },

    #[error("combination {index} needs manual review: every candidate parameter is already fixed ({candidates:?})")]
    ManualReview {
        index: usize,
        candidates: Vec<String>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DegenerateData(_) => "degenerate_data",
            Error::SamplingFailed { .. } => "sampling_failed",
            Error::InsufficientRays { .. } => "insufficient_rays",
            Error::NonFiniteResidual => "non_finite_residual",
            Error::SingularNormalEquations { .. } => "singular_normal_equations",
            Error::ManualReview { .. } => "manual_review",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
