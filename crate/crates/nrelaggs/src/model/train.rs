//! Gradient training of an assembled model: Adam over hinge loss with early
//! stopping and best-parameter restore.

use super::{ModelConfig, NRelaggsModel};
use crate::bundle::{collate, BatchBundle, InstanceBundle};
use crate::error::{ModelError, PreprocessError};
use crate::neural::{hinge_loss, Adam, Scalar};

/// What happened over one training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Epochs actually executed (≤ configured epochs when stopping early).
    pub epochs_run: usize,
    /// Epoch whose parameters the model ended up with (0-based).
    pub best_epoch: usize,
    /// Monitored loss at the best epoch.
    pub best_loss: f64,
    /// Mean training hinge loss per epoch, computed on the forward passes
    /// used for the updates.
    pub train_losses: Vec<f64>,
    /// Hinge loss on the validation batch after each epoch, when one was
    /// given; this is then the monitored quantity instead of train loss.
    pub validation_losses: Option<Vec<f64>>,
    pub stopped_early: bool,
}

/// Collate instance bundles into training batches: one full batch while the
/// total element count stays under `config.max_batch_elements`, otherwise
/// chunks of `config.batch_instances` instances.
pub fn make_batches(
    bundles: &[InstanceBundle],
    config: &ModelConfig,
) -> Result<Vec<BatchBundle>, PreprocessError> {
    let elements: usize = bundles
        .iter()
        .flat_map(|b| b.tables.iter())
        .map(|t| t.rows * t.width.max(1))
        .sum();
    if elements <= config.max_batch_elements || bundles.len() <= config.batch_instances.max(1) {
        return Ok(vec![collate(bundles)?]);
    }
    bundles
        .chunks(config.batch_instances.max(1))
        .map(collate)
        .collect()
}

/// Train in place. Returns the per-epoch history; on return the model holds
/// the parameters of the best monitored epoch.
pub fn train<F: Scalar>(
    model: &mut NRelaggsModel<F>,
    batches: &[BatchBundle<F>],
    validation: Option<&BatchBundle<F>>,
) -> Result<TrainReport, ModelError> {
    let n_train: usize = batches.iter().map(|b| b.n_instances).sum();
    if n_train == 0 {
        return Err(ModelError::PlanMismatch("training set is empty".into()));
    }
    let config = model.config().clone();
    let frozen = if config.freeze_identity { model.n_aggregation_params() } else { 0 };
    let mut adam: Adam<F> = Adam::new(model.n_params(), config.optimizer);

    let mut train_losses = Vec::with_capacity(config.epochs);
    let mut validation_losses = validation.map(|_| Vec::with_capacity(config.epochs));
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params_flat();
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut epochs_run = 0usize;

    for epoch in 0..config.epochs {
        epochs_run = epoch + 1;
        let mut loss_sum = 0.0;
        for batch in batches {
            let cache = model.forward(batch)?;
            let (loss, grad_scores) = hinge_loss(&cache.scores, &batch.labels)?;
            loss_sum += loss.to_f64() * batch.n_instances as f64;
            let mut grads = model.backward(batch, &cache, &grad_scores)?;
            grads[..frozen].iter_mut().for_each(|g| *g = F::zero());
            let mut params = model.params_flat();
            adam.step(&mut params, &grads)?;
            model.set_params_flat(&params)?;
        }
        let train_loss = loss_sum / n_train as f64;
        train_losses.push(train_loss);

        let monitored = match validation {
            Some(val) => {
                let scores = model.predict_scores(val)?;
                let (loss, _) = hinge_loss(&scores, &val.labels)?;
                let loss = loss.to_f64();
                validation_losses.as_mut().unwrap().push(loss);
                loss
            }
            None => train_loss,
        };
        if !monitored.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }

        if monitored < best_loss - config.tolerance {
            best_loss = monitored;
            best_epoch = epoch;
            best_params = model.params_flat();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    model.set_params_flat(&best_params)?;
    Ok(TrainReport {
        epochs_run,
        best_epoch,
        best_loss,
        train_losses,
        validation_losses,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::build_instance;
    use crate::datagen::{synthetic_snowflake, SynthConfig};
    use crate::model::build_model;
    use crate::plan::generate_aggregation_plan;
    use crate::preprocess::{fit_preprocessor, LabelMap};

    fn fixture(instances: usize, seed: u64) -> (Vec<InstanceBundle>, Vec<usize>, crate::plan::AggregationPlan) {
        fixture_with(SynthConfig { instances, seed, ..Default::default() })
    }

    fn fixture_with(cfg: SynthConfig) -> (Vec<InstanceBundle>, Vec<usize>, crate::plan::AggregationPlan) {
        let db = synthetic_snowflake(&cfg);
        let keys = db.instance_keys();
        let state = fit_preprocessor(&db, &keys).unwrap();
        let plan = generate_aggregation_plan(&db).unwrap();
        let labels = LabelMap::from_database(&db).unwrap();
        let bundles = keys
            .iter()
            .map(|k| build_instance(&db, &state, &plan, &labels, k).unwrap())
            .collect();
        let encoded = (0..plan.n_tables())
            .map(|t| state.width_by_index(plan.db_index(t)))
            .collect();
        (bundles, encoded, plan)
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let (bundles, encoded, plan) = fixture(40, 11);
        let config = ModelConfig { epochs: 30, patience: 30, ..Default::default() };
        let batches = make_batches(&bundles, &config).unwrap();
        let mut model = build_model::<f32>(&encoded, &plan, &config, 7).unwrap();
        let report = train(&mut model, &batches, None).unwrap();
        assert!(report.epochs_run >= 1);
        let first = report.train_losses[0];
        let last = *report.train_losses.last().unwrap();
        assert!(
            last < 0.5 * first,
            "loss should at least halve on planted data: {first} -> {last}"
        );
    }

    #[test]
    fn frozen_aggregation_parameters_never_move() {
        // identity pinning requires every table to have positive width, so
        // leave out the key-only table
        let (bundles, encoded, plan) = fixture_with(SynthConfig {
            instances: 20,
            seed: 13,
            with_marks: false,
            ..Default::default()
        });
        let config = ModelConfig {
            freeze_identity: true,
            epochs: 5,
            ..Default::default()
        };
        let batches = make_batches(&bundles, &config).unwrap();
        let mut model = build_model::<f32>(&encoded, &plan, &config, 3).unwrap();
        let before = model.params_flat();
        let frozen = model.n_aggregation_params();
        train(&mut model, &batches, None).unwrap();
        let after = model.params_flat();
        assert_eq!(before[..frozen], after[..frozen], "identity layers must stay pinned");
        assert_ne!(before[frozen..], after[frozen..], "the predictor must still learn");
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (bundles, encoded, plan) = fixture(16, 17);
        let config = ModelConfig {
            epochs: 50,
            patience: 3,
            // an improvement bar nothing can clear: epoch 0 sets the best,
            // then patience runs out
            tolerance: 1e9,
            ..Default::default()
        };
        let batches = make_batches(&bundles, &config).unwrap();
        let mut model = build_model::<f32>(&encoded, &plan, &config, 23).unwrap();
        let report = train(&mut model, &batches, None).unwrap();
        assert!(report.stopped_early);
        assert_eq!(report.best_epoch, 0);
        assert_eq!(report.epochs_run, 1 + config.patience);
    }

    #[test]
    fn best_parameters_are_restored_for_the_monitored_batch() {
        let (bundles, encoded, plan) = fixture(24, 19);
        let config = ModelConfig { epochs: 12, patience: 12, ..Default::default() };
        let batches: Vec<BatchBundle<f64>> = make_batches(&bundles, &config)
            .unwrap()
            .iter()
            .map(BatchBundle::cast)
            .collect();
        let val = batches[0].clone();
        let mut model = build_model::<f64>(&encoded, &plan, &config, 29).unwrap();
        let report = train(&mut model, &batches, Some(&val)).unwrap();

        let val_losses = report.validation_losses.as_ref().unwrap();
        assert_eq!(val_losses.len(), report.epochs_run);
        let min = val_losses.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_loss, min);
        // restored parameters reproduce the best monitored loss exactly
        let scores = model.predict_scores(&val).unwrap();
        let (loss, _) = hinge_loss(&scores, &val.labels).unwrap();
        assert_eq!(loss, report.best_loss);
    }

    #[test]
    fn exploding_parameters_abort_with_a_clear_error() {
        let (bundles, encoded, plan) = fixture(8, 31);
        let config = ModelConfig { epochs: 3, ..Default::default() };
        let batches = make_batches(&bundles, &config).unwrap();
        let mut model = build_model::<f32>(&encoded, &plan, &config, 37).unwrap();
        let huge = vec![1e30f32; model.n_params()];
        model.set_params_flat(&huge).unwrap();
        assert!(matches!(
            train(&mut model, &batches, None),
            Err(ModelError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn oversize_training_sets_are_chunked() {
        let (bundles, _, _) = fixture(30, 41);
        let config = ModelConfig { max_batch_elements: 10, batch_instances: 8, ..Default::default() };
        let batches = make_batches(&bundles, &config).unwrap();
        assert_eq!(batches.len(), 4, "30 instances in chunks of 8");
        assert_eq!(batches.iter().map(|b| b.n_instances).sum::<usize>(), 30);
        let one = make_batches(&bundles, &ModelConfig::default()).unwrap();
        assert_eq!(one.len(), 1);
    }
}
