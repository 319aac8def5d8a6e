use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("moving set is infeasible at t = {t}: {reason}")]
    Infeasible { t: f64, reason: String },

    #[error("{what} exceeds the enumeration cap ({dim} > {cap})")]
    EnumerationCap {
        what: &'static str,
        dim: usize,
        cap: usize,
    },

    #[error("complementarity problem unsolvable ({status}); {hint}")]
    Lcp { status: String, hint: String },

    #[error("matrix {name} is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { name: &'static str, asymmetry: f64 },

    #[error("matrix {name} is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { name: &'static str, min_eig: f64 },

    #[error("time step dt = {dt} rejected: {reason}")]
    StepRejected { dt: f64, reason: String },

    #[error("no admissible post-jump state at t = {t}: {reason} (assumption A3 likely fails)")]
    Jump { t: f64, reason: String },

    #[error("simulation failed at t = {t}: {source}")]
    Simulation {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("synthesis failed after {iterations} iterations: {diagnostics}")]
    Synthesis { iterations: usize, diagnostics: String },

    #[error("validation failed: {field}: {message}")]
    Validation { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
