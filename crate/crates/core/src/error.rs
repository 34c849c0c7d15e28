use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("schema graph contains a cycle through tables {0:?}")]
    CyclicSchema(Vec<String>),

    #[error("edge {edge} references unknown column `{column}`")]
    DanglingEdge { edge: String, column: String },

    #[error("uncoverable query: no subschema covers join {0}")]
    UncoverableQuery(String),

    #[error("unsupported cyclic query: {0}")]
    CyclicQuery(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("failed to load {path}, row {row}: {message}")]
    Load {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("failed to parse workload: {0}")]
    Workload(String),

    #[error("join of subschema `{subschema}` has {size} rows, above the materialization threshold {threshold}")]
    JoinTooLarge {
        subschema: String,
        size: u128,
        threshold: u128,
    },

    #[error("empty relation: subschema `{0}` has no rows to sample")]
    EmptyRelation(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("no estimator for subschema `{0}`")]
    MissingEstimator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step} (lr {lr}): loss is {loss}")]
    TrainingDiverged { step: usize, lr: f64, loss: f64 },

    #[error("bad model file: {0}")]
    ModelFormat(String),

    #[error("layout mismatch: model declares layout {declared:016x}, relation has {found:016x}")]
    LayoutMismatch { declared: u64, found: u64 },

    #[error("bad join-sample file: {0}")]
    SampleFormat(String),

    #[error("cardinality source failed on subquery {subquery}: {message}")]
    Planner { subquery: String, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
