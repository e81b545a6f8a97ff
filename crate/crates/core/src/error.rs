use std::path::PathBuf;

use crate::address::TableId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no reference available")]
    NoReference,

    #[error("out of range: table {table_id}, logical block {logical_no}")]
    OutOfRange { table_id: TableId, logical_no: i128 },

    #[error("line {line}: invalid {field}: {reason}")]
    Parse { line: usize, field: &'static str, reason: String },

    #[error("line {line}: unknown table '{name}'")]
    UnknownTable { line: usize, name: String },

    #[error("missing catalog header")]
    MissingCatalogHeader,

    #[error("no pattern program available")]
    NoPatternProgram,

    #[error("unseen column {0}")]
    UnseenColumn(usize),

    #[error("insufficient rank seed: batch has {rows} rows, need at least {needed}")]
    InsufficientRankSeed { rows: usize, needed: usize },

    #[error("shape mismatch in {component}: expected {expected}, got {actual}")]
    ShapeMismatch { component: &'static str, expected: usize, actual: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("incompatible artifacts: {0}")]
    IncompatibleArtifacts(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("budget exceeded by policy {policy}: {used} native blocks > {budget}")]
    BudgetExceeded { policy: String, used: u64, budget: u64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
