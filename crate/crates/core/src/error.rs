use thiserror::Error;

pub type Result<T, E = MemsimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MemsimError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("parse error at row {row}: {detail}")]
    Parse { row: usize, detail: String },

    #[error("invalid config at `{path}`: {detail}")]
    Config { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MemsimError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        MemsimError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(detail: impl Into<String>) -> Self {
        MemsimError::Contract(detail.into())
    }

    pub(crate) fn config(path: impl Into<String>, detail: impl Into<String>) -> Self {
        MemsimError::Config {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
