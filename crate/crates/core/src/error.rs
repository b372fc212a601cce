use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error in `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported tag `{tag}` at line {line}")]
    UnsupportedTag { line: usize, tag: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("conductivity out of range at node {node}: sigma + sigma0 = {value}")]
    Conductivity { node: usize, value: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("singular matrix (pivot {pivot})")]
    Singular { pivot: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), msg: msg.into() }
    }

    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::Solver(_) | Error::Conductivity { .. } | Error::Domain(_)
        )
    }
}
