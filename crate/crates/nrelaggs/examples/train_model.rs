//! Fit a trainable-aggregation model on a whole database and save a
//! checkpoint. Shows the lower-level pieces the `train` subcommand wires
//! together: preprocessor, plan, instance bundles, model, trainer.

use std::path::Path;

use nrelaggs::bundle::build_instance;
use nrelaggs::model::{
    build_model, make_batches, save_checkpoint, train, Checkpoint, ModelConfig,
};
use nrelaggs::plan::generate_aggregation_plan;
use nrelaggs::preprocess::{fit_preprocessor, LabelMap};
use nrelaggs::schema::RelationalDatabase;

fn main() -> Result<(), nrelaggs::CliError> {
    let schema = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/trains/schema.json");
    let db = RelationalDatabase::load(&schema, schema.parent().unwrap())?;

    // Fit every stage on the full database (no held-out data here; see the
    // cross_validate example for honest estimates).
    let keys = db.instance_keys();
    let state = fit_preprocessor(&db, &keys)?;
    let plan = generate_aggregation_plan(&db)?;
    let labels = LabelMap::from_database(&db)?;
    let bundles: Vec<_> = keys
        .iter()
        .map(|k| build_instance(&db, &state, &plan, &labels, k))
        .collect::<Result<_, _>>()?;

    let config = ModelConfig { epochs: 30, patience: 30, ..ModelConfig::default() };
    let widths: Vec<usize> =
        (0..plan.n_tables()).map(|t| state.width_by_index(plan.db_index(t))).collect();
    let mut model = build_model::<f32>(&widths, &plan, &config, 7)?;
    println!("model has {} parameters over {} tables", model.n_params(), plan.n_tables());

    let batches = make_batches(&bundles, &config)?;
    let report = train(&mut model, &batches, None)?;
    println!(
        "trained {} epochs; best loss {:.6} at epoch {}",
        report.epochs_run, report.best_loss, report.best_epoch
    );

    let out = std::env::temp_dir().join("train_model_example.nrck");
    save_checkpoint(&out, &Checkpoint::from_model(&model, &state, &labels))?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}
