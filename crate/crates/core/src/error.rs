use thiserror::Error;

use crate::solver::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, empty groups, bad membership maps and the like.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A coefficient matrix handed to the conic layer is not Hermitian.
    #[error("coefficient of {context} is not Hermitian (asymmetry {asymmetry:.3e})")]
    NotHermitian { context: String, asymmetry: f64 },

    #[error("conic solve failed with status {status:?}: {detail}")]
    Solver { status: SolveStatus, detail: String },

    /// A solver failure inside the bisection loop, with the bracket at the time.
    #[error("bisection aborted at t={t:.6e} (bracket [{lo:.6e}, {hi:.6e}], iteration {iteration}): {source}")]
    Bisection {
        t: f64,
        lo: f64,
        hi: f64,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown preset `{name}`; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::NotHermitian { .. } => "not_hermitian",
            Error::Solver { .. } => "solver",
            Error::Bisection { .. } => "bisection",
            Error::UnknownPreset { .. } => "unknown_preset",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
