use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("unknown node name `{0}`")]
    UnknownNodeName(String),
    #[error("cycle detected in network graph")]
    CycleDetected,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate sigmoid link: theta1 = 0")]
    DegenerateLink,
    #[error("empty cluster: all candidate profiles are zero")]
    EmptyCluster,
    #[error("posterior moments missing for node {node} (instance {instance})")]
    MissingMoment { node: usize, instance: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: String, msg: String },
    #[error("dataset is not fully observed; use the structural EM path")]
    NotFullyObserved,
    #[error("operation requires linear-Gaussian families only")]
    NonLinearFamily,
    #[error("network JSON: {0}")]
    NetworkFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
