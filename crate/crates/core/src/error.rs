use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, missing atoms).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value showed up during evaluation.
    #[error("numeric error at node {node} ({op}): {detail}")]
    Numeric {
        node: usize,
        op: &'static str,
        detail: String,
    },

    /// Malformed task input (unknown token, empty sequence, bad source string).
    #[error("input error: {0}")]
    Input(String),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("semantic error: {0}")]
    Semantic(String),

    /// Exhaustive exploration would materialize too many outcomes.
    #[error("exhaustive exploration needs {needed} outcomes but the cap is {cap}; use top1 or sampling instead")]
    Capacity { needed: usize, cap: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
