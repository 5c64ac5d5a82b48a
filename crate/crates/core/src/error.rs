use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("sample index gap: expected k = {expected}, found k = {found}")]
    Gap { expected: i64, found: i64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("ill-posed coefficient fit: regressor rank {rank} < {required}")]
    IllPosedFit { rank: usize, required: usize },

    #[error("data dictionary is not persistently exciting: rank {rank} < {required}")]
    NotPersistentlyExciting { rank: usize, required: usize },

    #[error("closed-loop consistency equation not representable: residual {residual:e}")]
    Representability { residual: f64 },

    #[error("assembly error in block {block}: {detail}")]
    Assembly { block: String, detail: String },

    #[error("synthesis infeasible: {0}")]
    Infeasible(InfeasibilityReport),

    #[error("sdp backend `{backend}` failed: {detail}")]
    Backend { backend: String, detail: String },

    #[error("solution failed independent verification: {0}")]
    Verification(String),

    #[error("ill-conditioned Lyapunov variable: min eigenvalue {min_eig:e}")]
    Conditioning { min_eig: f64 },

    #[error("fixed-point iteration did not converge at step {step} (last update {last_update:e})")]
    FixedPoint { step: usize, last_update: f64 },

    #[error("simulation failed at step {step}: {detail}")]
    Simulation { step: usize, detail: String },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

/// Constraint families that a relaxed re-solve could not satisfy.
#[derive(Debug, Clone, Default)]
pub struct InfeasibilityReport {
    pub backend_status: String,
    /// `(constraint name, violation)`; positive violation means the
    /// constraint needed slack.
    pub violations: Vec<(String, f64)>,
}

impl std::fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "backend status {}", self.backend_status)?;
        if self.violations.is_empty() {
            return Ok(());
        }
        write!(f, "; violated:")?;
        for (name, v) in &self.violations {
            write!(f, " {name} ({v:.3e})")?;
        }
        Ok(())
    }
}
