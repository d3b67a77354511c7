use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes incompatible with the primitive's contract.
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Inputs violate a value-level precondition (e.g. nonpositive step sizes).
    #[error("contract violation in `{op}`: {detail}")]
    Contract { op: &'static str, detail: String },

    /// Bad or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed text input (config files, CSVs, meta files).
    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// Checkpoint serialization problems (magic, version, truncation, name/shape mismatch).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Non-finite values where finite ones are required (e.g. training loss went NaN).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Dataset layout problems: missing files, id mismatches, bad frame counts.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
