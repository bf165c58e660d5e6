//! Evaluation: metrics, stratified splitting, hyperparameter grids, and the
//! repeated nested cross-validation protocol.

mod benchmark;
mod grid;
mod metrics;
mod split;

pub use benchmark::{
    derive_seed, fit_and_score, run_benchmark, EvalReport, FoldResult, Protocol,
};
pub use grid::{config_grid, grid_search, Candidate, Engine};
pub use metrics::{accuracy, auroc, majority_accuracy, majority_label, predictions_from_scores};
pub use split::{complement, stratified_kfold};
