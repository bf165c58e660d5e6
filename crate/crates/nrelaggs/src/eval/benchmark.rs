//! Repeated, stratified, nested cross-validation of the engines.
//!
//! Outer loop: `repeats` independent stratified k-fold splits. Inner loop:
//! on each training fold, every grid candidate is scored by mean AUROC over
//! an inner stratified split, the winner is refit on the whole training fold
//! and evaluated on the held-out fold. All randomness is derived from the
//! protocol seed and the (repeat, fold, candidate) coordinates, so results
//! are identical regardless of how the folds are scheduled across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{build_instance, collate, BatchBundle, InstanceBundle};
use crate::error::EvalError;
use crate::eval::grid::{config_grid, grid_search, Candidate, Engine};
use crate::eval::metrics::{accuracy, auroc, majority_label, predictions_from_scores};
use crate::eval::split::{complement, stratified_kfold};
use crate::model::{build_model, make_batches, train as train_model, ModelConfig};
use crate::plan::{generate_aggregation_plan, AggregationPlan};
use crate::preprocess::{fit_preprocessor, LabelMap};
use crate::relaggs::relaggs_matrix;
use crate::schema::RelationalDatabase;

/// Shape of the evaluation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    /// Independent repetitions of the whole cross-validation.
    pub repeats: usize,
    /// Outer folds per repetition (reduced if the smallest class is smaller).
    pub folds: usize,
    /// Folds of the inner model-selection split.
    pub inner_folds: usize,
    /// Root seed; everything else is derived.
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol { repeats: 2, folds: 10, inner_folds: 3, seed: 0 }
    }
}

/// One held-out fold's outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub auroc: f64,
    /// Name of the grid candidate the inner selection chose.
    pub chosen: String,
}

/// The aggregate outcome of a benchmark run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub engine: Engine,
    pub protocol: Protocol,
    pub n_instances: usize,
    /// Outer fold count actually used (see [`Protocol::folds`]).
    pub folds_used: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub fold_results: Vec<FoldResult>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with coordinates (repeat, fold, candidate, …) into an
/// independent stream seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &p in parts {
        state = splitmix64(state ^ p);
    }
    state
}

fn mean_and_population_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fit one engine configuration on the `train` instances and score the
/// `test` instances. Preprocessing is fit on the training side only.
/// Returns `(scores, hard predictions)`.
pub fn fit_and_score(
    db: &RelationalDatabase,
    engine: Engine,
    config: &ModelConfig,
    train: &[usize],
    test: &[usize],
    keys: &[String],
    ys: &[f32],
    seed: u64,
) -> Result<(Vec<f32>, Vec<f32>), EvalError> {
    if engine == Engine::Majority {
        let train_ys: Vec<f32> = train.iter().map(|&i| ys[i]).collect();
        let label = majority_label(&train_ys);
        return Ok((vec![0.0; test.len()], vec![label; test.len()]));
    }

    let train_keys: Vec<String> = train.iter().map(|&i| keys[i].clone()).collect();
    let state = fit_preprocessor(db, &train_keys)?;
    let plan = generate_aggregation_plan(db)?;
    let labels = LabelMap::from_database(db)?;
    let bundle_of = |i: &usize| build_instance(db, &state, &plan, &labels, &keys[*i]);
    let train_bundles: Vec<InstanceBundle> = train.iter().map(bundle_of).collect::<Result<_, _>>()?;
    let test_bundles: Vec<InstanceBundle> = test.iter().map(bundle_of).collect::<Result<_, _>>()?;
    let test_batch = collate(&test_bundles)?;

    let scores = match engine {
        Engine::Majority => unreachable!("handled above"),
        Engine::Relaggs => {
            let train_batch = collate(&train_bundles)?;
            let f_train = relaggs_matrix(&train_batch, &plan)?;
            let f_test = relaggs_matrix(&test_batch, &plan)?;
            let flat_plan = AggregationPlan::single_table("static_features");
            let mut model =
                build_model::<f32>(&[f_train.ncols()], &flat_plan, config, seed)?;
            let train_flat =
                BatchBundle::from_matrix(f_train, train_batch.labels, train_batch.keys);
            train_model(&mut model, &[train_flat], None)?;
            let test_flat = BatchBundle::from_matrix(f_test, test_batch.labels, test_batch.keys);
            model.predict_scores(&test_flat)?
        }
        Engine::NRelaggs | Engine::FixNRelaggs => {
            let encoded: Vec<usize> = (0..plan.n_tables())
                .map(|t| state.width_by_index(plan.db_index(t)))
                .collect();
            let mut model = build_model::<f32>(&encoded, &plan, config, seed)?;
            let batches = make_batches(&train_bundles, config)?;
            train_model(&mut model, &batches, None)?;
            model.predict_scores(&test_batch)?
        }
    };
    let predictions = predictions_from_scores(&scores);
    Ok((scores, predictions))
}

/// Run the full protocol for one engine over one database.
pub fn run_benchmark(
    db: &RelationalDatabase,
    engine: Engine,
    base: &ModelConfig,
    protocol: &Protocol,
) -> Result<EvalReport, EvalError> {
    let keys = db.instance_keys();
    let labels: Vec<String> = keys
        .iter()
        .map(|k| db.target_label(db.instance_row(k).expect("key from the table")).to_string())
        .collect();
    let label_map = LabelMap::from_database(db)?;
    let ys: Vec<f32> = labels
        .iter()
        .map(|l| label_map.target_value(l).expect("label from the table"))
        .collect();

    let smallest = {
        let mut counts = std::collections::BTreeMap::new();
        for l in &labels {
            *counts.entry(l.as_str()).or_insert(0usize) += 1;
        }
        counts.values().copied().min().unwrap_or(0)
    };
    let folds_used = protocol.folds.min(smallest);
    if folds_used < 2 {
        return Err(EvalError::TooFewInstances {
            k: protocol.folds,
            needed: 2,
            smallest,
        });
    }
    if folds_used < protocol.folds {
        log::warn!(
            "smallest class has {smallest} instances; using {folds_used}-fold splits instead of {}",
            protocol.folds
        );
    }

    let candidates = config_grid(engine, base);
    let tasks: Vec<(usize, usize)> = (0..protocol.repeats)
        .flat_map(|r| (0..folds_used).map(move |f| (r, f)))
        .collect();

    let fold_results: Vec<FoldResult> = tasks
        .par_iter()
        .map(|&(repeat, fold)| {
            run_fold(db, engine, &candidates, protocol, folds_used, repeat, fold, &keys, &labels, &ys)
        })
        .collect::<Result<_, EvalError>>()?;

    let (accuracy_mean, accuracy_std) =
        mean_and_population_std(fold_results.iter().map(|f| f.accuracy));
    let (auroc_mean, auroc_std) = mean_and_population_std(fold_results.iter().map(|f| f.auroc));
    Ok(EvalReport {
        engine,
        protocol: *protocol,
        n_instances: keys.len(),
        folds_used,
        accuracy_mean,
        accuracy_std,
        auroc_mean,
        auroc_std,
        fold_results,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    db: &RelationalDatabase,
    engine: Engine,
    candidates: &[Candidate],
    protocol: &Protocol,
    folds_used: usize,
    repeat: usize,
    fold: usize,
    keys: &[String],
    labels: &[String],
    ys: &[f32],
) -> Result<FoldResult, EvalError> {
    let folds = stratified_kfold(labels, folds_used, derive_seed(protocol.seed, &[1, repeat as u64]))?;
    let test = &folds[fold];
    let train = complement(&folds, fold);

    // inner model selection on the training fold only
    let train_labels: Vec<String> = train.iter().map(|&i| labels[i].clone()).collect();
    let smallest_train = {
        let mut counts = std::collections::BTreeMap::new();
        for l in &train_labels {
            *counts.entry(l.as_str()).or_insert(0usize) += 1;
        }
        counts.values().copied().min().unwrap_or(0)
    };
    let inner_folds = protocol.inner_folds.min(smallest_train);
    let best = if candidates.len() > 1 && inner_folds >= 2 {
        let (best, _) = grid_search(
            candidates,
            &train_labels,
            inner_folds,
            derive_seed(protocol.seed, &[2, repeat as u64, fold as u64]),
            |c, inner_fold, inner_train, inner_val| {
                // indices are into `train_labels`; lift to instance indices
                let tr: Vec<usize> = inner_train.iter().map(|&i| train[i]).collect();
                let va: Vec<usize> = inner_val.iter().map(|&i| train[i]).collect();
                let model_seed = derive_seed(
                    protocol.seed,
                    &[3, repeat as u64, fold as u64, c as u64, inner_fold as u64],
                );
                let (scores, _) =
                    fit_and_score(db, engine, &candidates[c].config, &tr, &va, keys, ys, model_seed)?;
                let val_ys: Vec<f32> = va.iter().map(|&i| ys[i]).collect();
                auroc(&scores, &val_ys)
            },
        )?;
        best
    } else {
        if candidates.len() > 1 {
            log::warn!(
                "training fold too small for {}-fold inner selection; using `{}`",
                protocol.inner_folds,
                candidates[0].name
            );
        }
        0
    };

    let model_seed = derive_seed(protocol.seed, &[4, repeat as u64, fold as u64]);
    let (scores, predictions) =
        fit_and_score(db, engine, &candidates[best].config, &train, test, keys, ys, model_seed)?;
    let test_ys: Vec<f32> = test.iter().map(|&i| ys[i]).collect();
    Ok(FoldResult {
        repeat,
        fold,
        n_train: train.len(),
        n_test: test.len(),
        accuracy: accuracy(&predictions, &test_ys)?,
        auroc: auroc(&scores, &test_ys)?,
        chosen: candidates[best].name.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synthetic_snowflake, SynthConfig};

    fn trains_db() -> RelationalDatabase {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/trains");
        RelationalDatabase::load(&dir.join("schema.json"), &dir).unwrap()
    }

    #[test]
    fn majority_floor_is_exactly_one_half_on_balanced_data() {
        let db = trains_db();
        let report =
            run_benchmark(&db, Engine::Majority, &ModelConfig::default(), &Protocol::default())
                .unwrap();
        assert_eq!(report.folds_used, 10);
        assert_eq!(report.fold_results.len(), 20);
        // 10 east / 10 west: every test fold is one of each, the tie-broken
        // majority prediction gets exactly one right
        assert_eq!(report.accuracy_mean, 0.5);
        assert_eq!(report.accuracy_std, 0.0);
        // constant scores rank nothing: AUROC is 1/2 by the tie rule
        assert_eq!(report.auroc_mean, 0.5);
        assert_eq!(report.auroc_std, 0.0);
    }

    #[test]
    fn derived_seeds_separate_coordinates() {
        let a = derive_seed(7, &[1, 2, 3]);
        let b = derive_seed(7, &[1, 2, 4]);
        let c = derive_seed(8, &[1, 2, 3]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, &[1, 2, 3]));
    }

    #[test]
    fn reports_are_deterministic() {
        let db = synthetic_snowflake(&SynthConfig { instances: 16, seed: 3, ..Default::default() });
        let base = ModelConfig { epochs: 4, patience: 4, ..Default::default() };
        let protocol = Protocol { repeats: 1, folds: 2, inner_folds: 2, seed: 9 };
        let a = run_benchmark(&db, Engine::Relaggs, &base, &protocol).unwrap();
        let b = run_benchmark(&db, Engine::Relaggs, &base, &protocol).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn trained_engines_beat_the_floor_on_planted_signal() {
        let db = synthetic_snowflake(&SynthConfig { instances: 40, seed: 21, ..Default::default() });
        let base = ModelConfig { epochs: 25, patience: 25, ..Default::default() };
        let protocol = Protocol { repeats: 1, folds: 4, inner_folds: 2, seed: 5 };
        for engine in [Engine::Relaggs, Engine::FixNRelaggs] {
            let report = run_benchmark(&db, engine, &base, &protocol).unwrap();
            assert!(
                report.auroc_mean > 0.85,
                "{engine}: AUROC {} too close to chance",
                report.auroc_mean
            );
            assert!(
                report.accuracy_mean > 0.75,
                "{engine}: accuracy {} too close to chance",
                report.accuracy_mean
            );
        }
    }

    #[test]
    fn fold_count_shrinks_to_the_smallest_class() {
        let db = synthetic_snowflake(&SynthConfig { instances: 10, seed: 1, ..Default::default() });
        let protocol = Protocol { repeats: 1, folds: 10, inner_folds: 2, seed: 0 };
        let report =
            run_benchmark(&db, Engine::Majority, &ModelConfig::default(), &protocol).unwrap();
        assert_eq!(report.folds_used, 5, "10 balanced instances allow at most 5 folds");
    }

    #[test]
    fn too_small_classes_are_an_error() {
        let db = synthetic_snowflake(&SynthConfig { instances: 3, seed: 1, ..Default::default() });
        assert!(matches!(
            run_benchmark(&db, Engine::Majority, &ModelConfig::default(), &Protocol::default()),
            Err(EvalError::TooFewInstances { .. })
        ));
    }
}
