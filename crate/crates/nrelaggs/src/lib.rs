//! Relational propositionalization with static and trainable aggregation.
//!
//! Converts a multi-relational database (a star/snowflake of CSV tables
//! described by a JSON schema) into one fixed-length feature vector per
//! target-table row, so that ordinary propositional learners can be applied:
//!
//! * **Static aggregation** ([`relaggs`]): recursively summarizes every
//!   related table with average/max/min/stddev/sum blocks.
//! * **Trainable aggregation** ([`model`]): one composite aggregation layer
//!   per table (linear map → sum/mean/min/max → linear map) trained jointly
//!   with an MLP scorer, so the summaries themselves adapt to the task.
//! * **Evaluation** ([`eval`]): stratified cross-validation with nested
//!   model selection, accuracy and AUROC.
//!
//! The pipeline stages are independent modules: [`schema`] loads and
//!   validates the database, [`plan`] derives the aggregation order,
//!   [`preprocess`] fits column encoders, [`bundle`] materializes per-instance
//!   row bundles, and [`commands`] wires everything into the CLI (`ingest`,
//!   `propositionalize`, `train`, `evaluate`, `extract-features`).
//!
//! Each capability has a runnable example:
//!
//! * `ingest_stats` — load, validate, and describe a database
//! * `aggregation_plan` — derive and print the aggregation order
//! * `relaggs_features` — static propositionalization to CSV
//! * `train_model` — fit a trainable-aggregation model and save a checkpoint
//! * `oracle_check` — confirm the fast forward pass against a dense reference
//! * `extract_embeddings` — dump learned feature vectors from a checkpoint
//! * `cross_validate` — the full repeated nested cross-validation protocol
//! * `synthetic_benchmark` — end-to-end run on a generated snowflake database

pub mod bundle;
pub mod commands;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod neural;
pub mod plan;
pub mod preprocess;
pub mod relaggs;
pub mod schema;

pub use error::{CliError, EvalError, ModelError, NeuralError, PreprocessError, SchemaError};
