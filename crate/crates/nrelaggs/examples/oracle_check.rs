//! Confirm the segment-kernel forward pass against a dense reference that
//! pads every instance's rows into a rectangular tensor and loops over it.
//! The two paths must agree to numerical noise on any batch.

use nrelaggs::bundle::{build_instance, collate};
use nrelaggs::datagen::{synthetic_snowflake, SynthConfig};
use nrelaggs::model::{build_model, forward_dense_oracle, ModelConfig, DENSE_ORACLE_CAP};
use nrelaggs::plan::generate_aggregation_plan;
use nrelaggs::preprocess::{fit_preprocessor, LabelMap};

fn main() -> Result<(), nrelaggs::CliError> {
    let db = synthetic_snowflake(&SynthConfig { instances: 40, seed: 11, ..Default::default() });
    let keys = db.instance_keys();
    let state = fit_preprocessor(&db, &keys)?;
    let plan = generate_aggregation_plan(&db)?;
    let labels = LabelMap::from_database(&db)?;
    let bundles: Vec<_> = keys
        .iter()
        .map(|k| build_instance(&db, &state, &plan, &labels, k))
        .collect::<Result<_, _>>()?;
    let batch = collate(&bundles)?.cast::<f64>();

    let widths: Vec<usize> =
        (0..plan.n_tables()).map(|t| state.width_by_index(plan.db_index(t))).collect();
    let config = ModelConfig { feature_generation_factor: 0.75, ..ModelConfig::default() };
    let model = build_model::<f64>(&widths, &plan, &config, 5)?;

    let fast = model.predict_scores(&batch)?;
    let slow = forward_dense_oracle(&model, &batch, DENSE_ORACLE_CAP)?;

    let worst = fast
        .iter()
        .zip(&slow)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("checked {} instances; worst |fast - dense| = {worst:.3e}", fast.len());
    assert!(worst < 1e-9, "paths disagree");
    println!("segment path matches the dense reference");
    Ok(())
}
