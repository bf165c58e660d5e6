//! Train briefly, save a checkpoint, and dump learned feature vectors from two
//! different layers — the assembled predictor input and a hidden activation —
//! the way `extract-features` exposes a trained model to other learners.

use std::path::Path;

use nrelaggs::commands::{
    cmd_extract_features, cmd_train, ExtractFeaturesArgs, TrainArgs,
};
use nrelaggs::eval::Engine;
use nrelaggs::model::{FeatureLayer, ModelConfig};

fn main() -> Result<(), nrelaggs::CliError> {
    let schema = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/trains/schema.json");
    let dir = std::env::temp_dir();
    let checkpoint = dir.join("extract_embeddings_example.nrck");

    let outcome = cmd_train(&TrainArgs {
        schema: &schema,
        data_dir: None,
        engine: Engine::NRelaggs,
        config: ModelConfig { epochs: 15, patience: 15, ..ModelConfig::default() },
        seed: 21,
        output: &checkpoint,
    })?;
    println!("trained {} parameters on {} instances", outcome.n_params, outcome.n_instances);

    for layer in [FeatureLayer::PrePredictor, FeatureLayer::Hidden(0)] {
        let out = dir.join(format!("embeddings_{layer:?}.csv"));
        let (n, d) = cmd_extract_features(&ExtractFeaturesArgs {
            schema: &schema,
            data_dir: None,
            checkpoint: &checkpoint,
            layer,
            output: &out,
        })?;
        println!("{layer:?}: {n} instances x {d} features -> {}", out.display());
    }
    Ok(())
}
