use std::fmt;

/// Outcome of one random restart, kept for diagnostics when every restart
/// fails.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
    pub message: Option<String>,
}

impl fmt::Display for TrialSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trial {}: ", self.trial)?;
        match (&self.message, self.loglik) {
            (Some(m), _) => write!(f, "{m}"),
            (None, Some(ll)) => write!(f, "loglik {ll:.6} after {} iterations", self.iterations),
            (None, None) => write!(f, "no likelihood"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),
    #[error("numerical underflow at t={t}: {what}")]
    Underflow { t: usize, what: String },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("fit failed: all {} trials failed or were degenerate", .0.len())]
    FitFailure(Vec<TrialSummary>),
    #[error("insufficient sample: {0}")]
    InsufficientSample(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::DegenerateWeights(_)
                | Error::Underflow { .. }
                | Error::DegenerateFit(_)
                | Error::FitFailure(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
