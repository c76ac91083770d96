use thiserror::Error;

/// Errors produced by graph loading, numeric kernels, and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("inconsistent graph data: {0}")]
    Consistency(String),

    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    Shape {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    #[error("homophily ratio undefined: graph has no edges")]
    EmptyEdgeSet,

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("class {class} has only {available} labeled nodes, need {needed}")]
    InsufficientClassNodes {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
