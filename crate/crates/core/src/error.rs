use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// No sample count up to `k_max` satisfies the target; `best_bound` is the
    /// smallest bound value seen during the search.
    #[error("no K <= {k_max} meets the target (best achievable bound {best_bound:.6e})")]
    Infeasible { k_max: usize, best_bound: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("analysis precondition violated: {0}")]
    Analysis(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// The error with any step context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config { .. } | Error::InvalidArgument(_) => 2,
            Error::Infeasible { .. } => 3,
            Error::Numerical(_) | Error::Analysis(_) | Error::State(_) => 4,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
            Error::AtStep { .. } => unreachable!(),
        }
    }
}
