//! The full evaluation protocol on a small real database: repeated stratified
//! cross-validation with nested model selection, comparing the majority floor
//! against static aggregation. Expect a few minutes of training.

use std::path::Path;

use nrelaggs::eval::{run_benchmark, Engine, Protocol};
use nrelaggs::model::ModelConfig;
use nrelaggs::schema::RelationalDatabase;

fn main() -> Result<(), nrelaggs::CliError> {
    let schema = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/trains/schema.json");
    let db = RelationalDatabase::load(&schema, schema.parent().unwrap())?;

    // Two repeats of (up to) 10-fold outer CV; 20 instances with 10 per class
    // will shrink this to 10 folds of 2. Keep epochs small for a demo.
    let protocol = Protocol { repeats: 2, folds: 10, inner_folds: 3, seed: 0 };
    let base = ModelConfig { epochs: 20, patience: 20, ..ModelConfig::default() };

    for engine in [Engine::Majority, Engine::Relaggs] {
        let report = run_benchmark(&db, engine, &base, &protocol)?;
        println!(
            "{:<12} accuracy {:.4} +- {:.4}   AUROC {:.4} +- {:.4}   ({} folds)",
            engine.name(),
            report.accuracy_mean,
            report.accuracy_std,
            report.auroc_mean,
            report.auroc_std,
            report.fold_results.len(),
        );
    }
    Ok(())
}
