//! Error types, grouped by pipeline stage.

use std::path::PathBuf;
use thiserror::Error;

/// Errors raised while loading or validating a relational database.
#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("table `{table}` has no data file at {path}")]
    MissingTableFile { table: String, path: PathBuf },

    #[error("header of `{table}` does not match its descriptor: expected {expected:?}, found {found:?}")]
    HeaderMismatch {
        table: String,
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("row {row} of `{table}` has {found} fields, expected {expected}")]
    RaggedRow {
        table: String,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{table}.{column} = `{value}` references no key in `{referenced}`")]
    DanglingForeignKey {
        table: String,
        column: String,
        value: String,
        referenced: String,
    },

    #[error("join graph around `{table}` is not a tree (cycle or parallel foreign keys)")]
    CyclicJoinGraph { table: String },

    #[error("target `{table}.{attribute}` is not usable as a class label: {reason}")]
    TargetNotCategorical {
        table: String,
        attribute: String,
        reason: String,
    },

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("duplicate key `{value}` in `{table}`")]
    DuplicateKey { table: String, value: String },

    #[error("row {row} of `{table}` has an empty key cell")]
    NullKey { table: String, row: usize },

    #[error("`{referenced}` is referenced by {table}.{column} but declares no key column")]
    MissingKeyColumn {
        table: String,
        column: String,
        referenced: String,
    },

    #[error("{table}.{column} value `{value}` (row {row}) is not numeric")]
    InvalidNumeric {
        table: String,
        column: String,
        value: String,
        row: usize,
    },

    #[error("invalid schema descriptor: {0}")]
    Descriptor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Errors raised while fitting or applying the column preprocessor and
/// building instance bundles.
#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cannot fit a preprocessor on an empty training set")]
    EmptyTrainSet,

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("no instance with key `{0}` in the target table")]
    UnknownInstanceKey(String),

    #[error("table `{table}`: bundle width {found} does not match preprocessor width {expected}")]
    IncompatibleWidths {
        table: String,
        expected: usize,
        found: usize,
    },

    #[error("target has {0} distinct classes; exactly two are required for training")]
    NonBinaryTarget(usize),

    #[error("row {row} of `{table}` has {found} cells, expected {expected}")]
    RowShape {
        table: String,
        row: usize,
        expected: usize,
        found: usize,
    },
}

/// Errors raised by the low-level numeric primitives.
#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("segment ids must be nondecreasing and < {n_segments}: id {value} at row {row}")]
    BadSegmentIndex {
        row: usize,
        value: u32,
        n_segments: usize,
    },

    #[error("labels must be exactly -1 or +1 (found {0})")]
    LabelDomain(f64),
}

/// Errors raised while assembling, training, or reloading models.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("width chain broken: {0}")]
    WidthChainBroken(String),

    #[error("batch does not match the model's aggregation plan: {0}")]
    PlanMismatch(String),

    #[error("dense reference path would span {elements} elements (cap {cap}); use the segment path")]
    OversizeBatch { elements: usize, cap: usize },

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("no feature layer `{0}` in this model")]
    UnknownLayer(String),

    #[error("checkpoint is malformed: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Neural(#[from] NeuralError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Errors raised by evaluation (splitting, metrics, benchmark protocol).
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {needed} instances per class for {k} folds (smallest class has {smallest})")]
    TooFewInstances {
        k: usize,
        needed: usize,
        smallest: usize,
    },

    #[error("cannot split into {0} folds; need at least 2")]
    BadFoldCount(usize),

    #[error("labels in the score domain must be -1 or +1 (found {0})")]
    BadLabel(f64),

    #[error("length mismatch: {left} scores vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("metric undefined: every instance belongs to class {0}")]
    SingleClass(String),

    #[error(transparent)]
    Schema(#[from] SchemaError),

    #[error(transparent)]
    Preprocess(#[from] PreprocessError),

    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Top-level error for the command layer.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("engine `{0}` needs a checkpoint (--checkpoint) to extract features")]
    MissingCheckpoint(String),

    #[error("engine `{engine}` cannot be used with `{command}`: {reason}")]
    UnsupportedEngine {
        engine: String,
        command: String,
        reason: String,
    },

    #[error(transparent)]
    Schema(#[from] SchemaError),

    #[error(transparent)]
    Preprocess(#[from] PreprocessError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
