use thiserror::Error;

/// Errors produced by the seqmix library.
#[derive(Error, Debug)]
pub enum SeqMixError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("infeasible moment target: {0}")]
    Feasibility(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SeqMixError>;

impl SeqMixError {
    /// Process exit code convention: 2 for parse/config errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            SeqMixError::Numeric(_) => 3,
            _ => 2,
        }
    }
}
