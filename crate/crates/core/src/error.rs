use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("singular model: {0}")]
    SingularModel(String),

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} p.u.)")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("numeric failure{}: {msg}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericFailure { step: Option<usize>, msg: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate denominator: measurement equals truth on every step")]
    DegenerateDenominator,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::NumericFailure { step: None, msg: msg.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Attach a step index to a numeric failure that lacks one.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::NumericFailure { step: None, msg } => Error::NumericFailure { step: Some(step), msg },
            other => other,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Validation(_) | Error::DimensionMismatch(_) => 1,
            Error::SingularModel(_)
            | Error::NonConvergence { .. }
            | Error::NumericFailure { .. }
            | Error::DegenerateDenominator => 2,
            Error::Io { .. } => 3,
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!("{what}: expected {want}, got {got}")));
    }
    Ok(())
}
