//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CokeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("unknown id {0}")]
    UnknownId(u32),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at step {step} (lr {lr:.3e}, grad norm {grad_norm:.3e})")]
    NonFiniteLoss { step: usize, lr: f64, grad_norm: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("sampling error: {0}")]
    Sampling(String),
}

pub type Result<T> = std::result::Result<T, CokeError>;

impl CokeError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CokeError::Io {
            path: path.into(),
            source,
        }
    }
}
