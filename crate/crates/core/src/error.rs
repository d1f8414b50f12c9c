use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The crystal data file could not be parsed.
    #[error("schema error: {0}")]
    Schema(String),

    /// The data parsed but violates a physical or structural rule.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("wavelength {lambda_nm} nm outside valid range [{min_nm}, {max_nm}] nm for {crystal}")]
    OutOfRange {
        crystal: String,
        lambda_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unknown crystal '{id}' (available: {available})")]
    UnknownCrystal { id: String, available: String },

    #[error("no phase-matched solution: {0}")]
    NoPhaseMatch(String),

    #[error("no bracketing root found in [{lo}, {hi}]: {what}")]
    NoBracket { what: String, lo: f64, hi: f64 },

    #[error(
        "solver did not converge after {iterations} iterations (best residual {best_residual:e})"
    )]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("direction too close to an optic axis: {0}")]
    Singularity(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fit initialization failed: {0}")]
    Initialization(String),

    #[error("fit failed: {message} (best cost {best_cost:e})")]
    Fit { message: String, best_cost: f64 },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NoPhaseMatch(_)
                | Error::NoBracket { .. }
                | Error::NonConvergence { .. }
                | Error::Geometry(_)
                | Error::Singularity(_)
                | Error::Degenerate(_)
                | Error::Initialization(_)
                | Error::Fit { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
