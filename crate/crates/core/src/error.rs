use thiserror::Error;

/// Errors produced by the allocation, training and persistence layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("solver did not converge after {iters} iterations (last residual {residual:.3e})")]
    Convergence { iters: usize, residual: f64 },

    #[error("required power exceeds the transmit budget of {budget:.4} W")]
    Infeasible { budget: f64 },

    #[error("solver failed for user {user}: {source}")]
    User {
        user: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("exhaustive search needs {needed} combinations (limit {limit})")]
    SearchBudget { needed: u128, limit: u128 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("invalid transfer plan: {0}")]
    InvalidPlan(String),

    #[error("no source model for service `{0}`")]
    MissingSource(String),

    #[error("config digest mismatch: model {model}, dataset {dataset}")]
    DigestMismatch { model: String, dataset: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn for_user(self, user: usize) -> Self {
        Error::User { user, source: Box::new(self) }
    }

    /// Short machine-readable tag, used by the CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Convergence { .. } => "convergence-failure",
            Error::Infeasible { .. } => "infeasible",
            Error::User { source, .. } => source.kind(),
            Error::SearchBudget { .. } => "search-budget",
            Error::Divergence(_) => "training-divergence",
            Error::InvalidPlan(_) => "invalid-plan",
            Error::MissingSource(_) => "missing-source",
            Error::DigestMismatch { .. } => "digest-mismatch",
            Error::Format { .. } => "malformed-file",
            Error::Io(_) => "io",
        }
    }

    /// True when the root cause is a per-user power-budget infeasibility.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible { .. } => true,
            Error::User { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
