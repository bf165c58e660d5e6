//! The trainable propositionalization model: one composite aggregation layer
//! per non-target table, glued along the plan, topped by an MLP scorer.
//!
//! Per table, the composite layer is
//! `feature_selection ∘ [sum|mean|min|max] ∘ feature_generation`:
//! a linear map into `l*` columns, the four segment reductions concatenated
//! to `4·l*` columns, and a linear map down to `l̄` columns. A parent's input
//! is the concatenation of its children's selected features (plan order)
//! followed by its own raw columns; the target's input feeds the predictor.
//! Aggregation layers are linear so that, pinned to identity, the model
//! reproduces plain static aggregation exactly; nonlinearity lives in the
//! predictor's ReLU hidden layers.

mod checkpoint;
mod oracle;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use oracle::{forward_dense_oracle, DENSE_ORACLE_CAP};
pub use train::{make_batches, train, TrainReport};

use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::BatchBundle;
use crate::error::ModelError;
use crate::neural::{
    segment_four_way, segment_four_way_backward, Activation, AdamConfig, DenseLayer, FourWayCache,
    Scalar, SegmentIndex,
};
use crate::plan::AggregationPlan;

/// Hyperparameters of one model; serializable so checkpoints and reports can
/// state exactly what was trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `g`: generated width factor, `l* = max(1, round(g·l))`.
    pub feature_generation_factor: f64,
    /// `s`: selected width factor, `l̄ = max(1, round(s·4·l*))`.
    pub feature_selection_factor: f64,
    /// Hidden layer sizes of the predictor MLP (ReLU); the final linear
    /// layer to one score is implicit.
    pub predictor_layers: Vec<usize>,
    pub epochs: usize,
    /// Early stopping: epochs without sufficient improvement before giving up.
    pub patience: usize,
    /// Minimum decrease of the monitored loss that counts as improvement.
    pub tolerance: f64,
    pub optimizer: AdamConfig,
    /// Pin aggregation layers to identity and keep them fixed; requires both
    /// width factors to be 1. The predictor still trains.
    pub freeze_identity: bool,
    /// Full-batch training is used while `rows·width` summed over tables
    /// stays under this; larger splits are chunked.
    pub max_batch_elements: usize,
    /// Instances per chunk when a split must be mini-batched.
    pub batch_instances: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_generation_factor: 1.0,
            feature_selection_factor: 1.0,
            predictor_layers: vec![100],
            epochs: 100,
            patience: 10,
            tolerance: 1e-4,
            optimizer: AdamConfig::default(),
            freeze_identity: false,
            max_batch_elements: 4_000_000,
            batch_instances: 64,
        }
    }
}

/// Column counts at every stage of the width chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelWidths {
    /// Raw encoded width per plan table.
    pub encoded: Vec<usize>,
    /// `l` per table: children's selected widths (plan order) + encoded.
    /// Index 0 is the predictor's input width.
    pub combined: Vec<usize>,
    /// `l*` per table (0 for the target, which has no aggregation layer).
    pub generated: Vec<usize>,
    /// `l̄` per table (0 for the target).
    pub selected: Vec<usize>,
}

/// Resolve the width chain bottom-up along the plan.
pub fn compute_widths(
    encoded: &[usize],
    plan: &AggregationPlan,
    config: &ModelConfig,
) -> Result<ModelWidths, ModelError> {
    if encoded.len() != plan.n_tables() {
        return Err(ModelError::WidthChainBroken(format!(
            "{} encoded widths for {} plan tables",
            encoded.len(),
            plan.n_tables()
        )));
    }
    let scale = |factor: f64, base: usize| -> usize {
        ((factor * base as f64).round() as usize).max(1)
    };
    let mut combined = encoded.to_vec();
    let mut generated = vec![0usize; encoded.len()];
    let mut selected = vec![0usize; encoded.len()];
    for step in plan.steps() {
        for &next in &step.nexts {
            // all of `next`'s children were handled in earlier steps, so its
            // combined width is final here
            generated[next] = scale(config.feature_generation_factor, combined[next]);
            selected[next] = scale(config.feature_selection_factor, 4 * generated[next]);
            combined[step.current] += selected[next];
        }
    }
    Ok(ModelWidths { encoded: encoded.to_vec(), combined, generated, selected })
}

/// The two trainable maps around the fixed four-way reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationLayer<F: Scalar> {
    /// `l → l*`, linear.
    pub feature_generation: DenseLayer<F>,
    /// `4·l* → l̄`, linear.
    pub feature_selection: DenseLayer<F>,
}

/// A fully assembled model for one plan.
#[derive(Clone, Debug)]
pub struct NRelaggsModel<F: Scalar> {
    plan: AggregationPlan,
    widths: ModelWidths,
    config: ModelConfig,
    /// Per plan table; `None` for the target.
    layers: Vec<Option<AggregationLayer<F>>>,
    /// Hidden ReLU layers followed by the final linear layer to one score.
    predictor: Vec<DenseLayer<F>>,
    seed: u64,
}

/// Build a model with seeded Glorot initialization (or identity layers when
/// the config freezes them).
pub fn build_model<F: Scalar>(
    encoded_widths: &[usize],
    plan: &AggregationPlan,
    config: &ModelConfig,
    seed: u64,
) -> Result<NRelaggsModel<F>, ModelError> {
    let widths = compute_widths(encoded_widths, plan, config)?;
    if config.freeze_identity {
        if config.feature_generation_factor != 1.0 || config.feature_selection_factor != 1.0 {
            return Err(ModelError::WidthChainBroken(
                "identity layers require both width factors to be 1".into(),
            ));
        }
        for t in 1..plan.n_tables() {
            if widths.combined[t] == 0 || widths.generated[t] != widths.combined[t] {
                return Err(ModelError::WidthChainBroken(format!(
                    "identity layers need positive width (table {} has combined width {})",
                    plan.table_order()[t],
                    widths.combined[t]
                )));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![None];
    for t in 1..plan.n_tables() {
        let layer = if config.freeze_identity {
            AggregationLayer {
                feature_generation: DenseLayer::identity(widths.combined[t], Activation::Linear),
                feature_selection: DenseLayer::identity(4 * widths.generated[t], Activation::Linear),
            }
        } else {
            AggregationLayer {
                feature_generation: DenseLayer::glorot(
                    widths.combined[t],
                    widths.generated[t],
                    Activation::Linear,
                    &mut rng,
                ),
                feature_selection: DenseLayer::glorot(
                    4 * widths.generated[t],
                    widths.selected[t],
                    Activation::Linear,
                    &mut rng,
                ),
            }
        };
        layers.push(Some(layer));
    }
    let mut predictor = Vec::new();
    let mut in_dim = widths.combined[0];
    for &h in &config.predictor_layers {
        predictor.push(DenseLayer::glorot(in_dim, h, Activation::Relu, &mut rng));
        in_dim = h;
    }
    predictor.push(DenseLayer::glorot(in_dim, 1, Activation::Linear, &mut rng));

    Ok(NRelaggsModel { plan: plan.clone(), widths, config: config.clone(), layers, predictor, seed })
}

/// Which feature matrix [`NRelaggsModel::extract_features`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureLayer {
    /// The target table's assembled input to the predictor.
    PrePredictor,
    /// Activation of the i-th hidden predictor layer.
    Hidden(usize),
}

impl std::str::FromStr for FeatureLayer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "pre_predictor" {
            return Ok(FeatureLayer::PrePredictor);
        }
        if let Some(i) = s.strip_prefix("hidden") {
            if let Ok(i) = i.parse() {
                return Ok(FeatureLayer::Hidden(i));
            }
        }
        Err(format!("unknown feature layer `{s}` (use pre_predictor or hidden<i>)"))
    }
}

/// Everything the backward pass and feature extraction need from a forward
/// pass.
pub struct ForwardCache<F: Scalar> {
    /// Assembled `l`-wide input per table (index 0 feeds the predictor).
    pub combined: Vec<Array2<F>>,
    fg_pre: Vec<Option<Array2<F>>>,
    four_way: Vec<Option<(Array2<F>, FourWayCache)>>,
    fs_pre: Vec<Option<Array2<F>>>,
    predictor_inputs: Vec<Array2<F>>,
    predictor_pre: Vec<Array2<F>>,
    pub scores: Vec<F>,
}

impl<F: Scalar> NRelaggsModel<F> {
    pub fn plan(&self) -> &AggregationPlan {
        &self.plan
    }

    pub fn widths(&self) -> &ModelWidths {
        &self.widths
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_hidden_layers(&self) -> usize {
        self.predictor.len() - 1
    }

    fn check_batch(&self, batch: &BatchBundle<F>) -> Result<(), ModelError> {
        if batch.tables.len() != self.plan.n_tables() {
            return Err(ModelError::PlanMismatch(format!(
                "batch has {} tables, plan {}",
                batch.tables.len(),
                self.plan.n_tables()
            )));
        }
        for (t, table) in batch.tables.iter().enumerate() {
            if table.data.ncols() != self.widths.encoded[t] {
                return Err(ModelError::PlanMismatch(format!(
                    "table {} is {} wide, model expects {}",
                    self.plan.table_order()[t],
                    table.data.ncols(),
                    self.widths.encoded[t]
                )));
            }
        }
        Ok(())
    }

    /// Run the model over a batch; returns scores plus every intermediate
    /// needed for [`Self::backward`].
    pub fn forward(&self, batch: &BatchBundle<F>) -> Result<ForwardCache<F>, ModelError> {
        self.check_batch(batch)?;
        let n = self.plan.n_tables();
        let mut pending: Vec<Vec<Array2<F>>> = vec![Vec::new(); n];
        let mut combined: Vec<Option<Array2<F>>> = vec![None; n];
        let mut fg_pre = vec![None; n];
        let mut four_way = vec![None; n];
        let mut fs_pre = vec![None; n];

        for step in self.plan.steps() {
            let parent_rows = batch.tables[step.current].data.nrows();
            for &next in &step.nexts {
                let input = assemble(&mut pending[next], &batch.tables[next].data, &mut combined[next]);
                let layer = self.layers[next].as_ref().expect("non-target table has a layer");
                let (generated, g_pre) = layer.feature_generation.forward_cached(&input.view())?;
                let seg = SegmentIndex::new(batch.tables[next].parent_ids.clone(), parent_rows)?;
                let (reduced, cache) = segment_four_way(&generated.view(), &seg)?;
                let (selected, s_pre) = layer.feature_selection.forward_cached(&reduced.view())?;
                fg_pre[next] = Some(g_pre);
                four_way[next] = Some((reduced, cache));
                fs_pre[next] = Some(s_pre);
                pending[step.current].push(selected);
            }
        }
        assemble(&mut pending[0], &batch.tables[0].data, &mut combined[0]);
        let combined: Vec<Array2<F>> = combined
            .into_iter()
            .enumerate()
            .map(|(t, c)| c.unwrap_or_else(|| batch.tables[t].data.to_owned()))
            .collect();

        let mut predictor_inputs = Vec::with_capacity(self.predictor.len());
        let mut predictor_pre = Vec::with_capacity(self.predictor.len());
        let mut x = combined[0].clone();
        for layer in &self.predictor {
            let (out, pre) = layer.forward_cached(&x.view())?;
            predictor_inputs.push(x);
            predictor_pre.push(pre);
            x = out;
        }
        let scores = x.column(0).to_vec();

        Ok(ForwardCache {
            combined,
            fg_pre,
            four_way,
            fs_pre,
            predictor_inputs,
            predictor_pre,
            scores,
        })
    }

    /// Raw scores only.
    pub fn predict_scores(&self, batch: &BatchBundle<F>) -> Result<Vec<F>, ModelError> {
        Ok(self.forward(batch)?.scores)
    }

    /// A learned feature matrix: the predictor's input, or a hidden
    /// activation.
    pub fn extract_features(
        &self,
        batch: &BatchBundle<F>,
        layer: FeatureLayer,
    ) -> Result<Array2<F>, ModelError> {
        let cache = self.forward(batch)?;
        match layer {
            FeatureLayer::PrePredictor => Ok(cache.combined[0].clone()),
            FeatureLayer::Hidden(i) => {
                if i + 1 >= self.predictor.len() {
                    return Err(ModelError::UnknownLayer(format!(
                        "hidden{i} (model has {} hidden layers)",
                        self.n_hidden_layers()
                    )));
                }
                // the input of layer i+1 is the activation of hidden layer i
                Ok(cache.predictor_inputs[i + 1].clone())
            }
        }
    }

    /// Gradient of a scalar loss with respect to every parameter, flattened
    /// in [`Self::params_flat`] order, given `∂loss/∂scores`.
    pub fn backward(
        &self,
        batch: &BatchBundle<F>,
        cache: &ForwardCache<F>,
        grad_scores: &[F],
    ) -> Result<Vec<F>, ModelError> {
        self.check_batch(batch)?;
        if grad_scores.len() != batch.n_instances {
            return Err(ModelError::PlanMismatch(format!(
                "{} score gradients for {} instances",
                grad_scores.len(),
                batch.n_instances
            )));
        }
        let n = self.plan.n_tables();
        let mut layer_grads: Vec<Option<(Array2<F>, ndarray::Array1<F>, Array2<F>, ndarray::Array1<F>)>> =
            vec![None; n];

        // predictor chain, last layer first
        let mut grad = Array2::from_shape_fn((grad_scores.len(), 1), |(i, _)| grad_scores[i]);
        let mut predictor_grads = vec![None; self.predictor.len()];
        for (i, layer) in self.predictor.iter().enumerate().rev() {
            let (gx, gw, gb) = layer.backward(
                &cache.predictor_inputs[i].view(),
                &cache.predictor_pre[i],
                &grad.view(),
            )?;
            predictor_grads[i] = Some((gw, gb));
            grad = gx;
        }

        // walk the plan outward, splitting each table's combined gradient
        // into its children's selected blocks (raw columns carry no params)
        let mut combined_grad: Vec<Option<Array2<F>>> = vec![None; n];
        combined_grad[0] = Some(grad);
        for step in self.plan.traversal_steps() {
            let g = combined_grad[step.current]
                .take()
                .expect("parent gradient exists before its step");
            let mut offset = 0usize;
            for &next in &step.nexts {
                let width = self.widths.selected[next];
                let g_selected = g.slice(ndarray::s![.., offset..offset + width]);
                offset += width;
                let layer = self.layers[next].as_ref().expect("non-target table has a layer");
                let (reduced, seg_cache) = cache.four_way[next].as_ref().expect("forward ran");
                let (g_reduced, gw_fs, gb_fs) = layer.feature_selection.backward(
                    &reduced.view(),
                    cache.fs_pre[next].as_ref().unwrap(),
                    &g_selected,
                )?;
                let rows = batch.tables[next].data.nrows();
                let g_generated = segment_four_way_backward(&g_reduced.view(), seg_cache, rows)?;
                let (g_combined, gw_fg, gb_fg) = layer.feature_generation.backward(
                    &cache.combined[next].view(),
                    cache.fg_pre[next].as_ref().unwrap(),
                    &g_generated.view(),
                )?;
                layer_grads[next] = Some((gw_fg, gb_fg, gw_fs, gb_fs));
                combined_grad[next] = Some(g_combined);
            }
        }

        // flatten in parameter order
        let mut flat = Vec::with_capacity(self.n_params());
        for t in 1..n {
            let (gw_fg, gb_fg, gw_fs, gb_fs) = layer_grads[t]
                .take()
                .expect("every non-target table was visited");
            flat.extend(gw_fg.iter());
            flat.extend(gb_fg.iter());
            flat.extend(gw_fs.iter());
            flat.extend(gb_fs.iter());
        }
        for g in predictor_grads.into_iter() {
            let (gw, gb) = g.expect("every predictor layer was visited");
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        Ok(flat)
    }

    pub fn n_params(&self) -> usize {
        let agg: usize = self
            .layers
            .iter()
            .flatten()
            .map(|l| l.feature_generation.n_params() + l.feature_selection.n_params())
            .sum();
        agg + self.predictor.iter().map(DenseLayer::n_params).sum::<usize>()
    }

    /// Parameters of the aggregation layers (the prefix of the flat vector);
    /// the trainer zeroes this range's gradients under `freeze_identity`.
    pub fn n_aggregation_params(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|l| l.feature_generation.n_params() + l.feature_selection.n_params())
            .sum()
    }

    /// All parameters as one vector: per non-target table in plan order,
    /// feature-generation weights (row-major) then bias, feature-selection
    /// weights then bias; then predictor layers likewise.
    pub fn params_flat(&self) -> Vec<F> {
        let mut flat = Vec::with_capacity(self.n_params());
        for layer in self.layers.iter().flatten() {
            flat.extend(layer.feature_generation.weights.iter());
            flat.extend(layer.feature_generation.bias.iter());
            flat.extend(layer.feature_selection.weights.iter());
            flat.extend(layer.feature_selection.bias.iter());
        }
        for layer in &self.predictor {
            flat.extend(layer.weights.iter());
            flat.extend(layer.bias.iter());
        }
        flat
    }

    /// Inverse of [`Self::params_flat`].
    pub fn set_params_flat(&mut self, flat: &[F]) -> Result<(), ModelError> {
        if flat.len() != self.n_params() {
            return Err(ModelError::WidthChainBroken(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut offset = 0usize;
        let fill_dense = |layer: &mut DenseLayer<F>, offset: &mut usize| {
            for w in layer.weights.iter_mut() {
                *w = flat[*offset];
                *offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = flat[*offset];
                *offset += 1;
            }
        };
        for layer in self.layers.iter_mut().flatten() {
            fill_dense(&mut layer.feature_generation, &mut offset);
            fill_dense(&mut layer.feature_selection, &mut offset);
        }
        for layer in self.predictor.iter_mut() {
            fill_dense(layer, &mut offset);
        }
        debug_assert_eq!(offset, flat.len());
        Ok(())
    }

    /// Rebuild with the same shapes in another element type (used to shadow
    /// an `f32` model in `f64`), copying parameters exactly.
    pub fn cast<G: Scalar>(&self) -> NRelaggsModel<G> {
        let mut other: NRelaggsModel<G> =
            build_model(&self.widths.encoded, &self.plan, &self.config, self.seed)
                .expect("same shapes rebuild");
        let params: Vec<G> = self.params_flat().iter().map(|&p| G::from_f64(p.to_f64())).collect();
        other.set_params_flat(&params).expect("same parameter count");
        other
    }
}

/// Concatenate a table's pending child blocks (plan order) with its raw
/// columns; stores and returns the assembled matrix.
fn assemble<F: Scalar>(
    pending: &mut Vec<Array2<F>>,
    raw: &Array2<F>,
    slot: &mut Option<Array2<F>>,
) -> Array2<F> {
    if slot.is_none() {
        let assembled = if pending.is_empty() {
            raw.to_owned()
        } else {
            let mut views: Vec<_> = pending.iter().map(|b| b.view()).collect();
            views.push(raw.view());
            concatenate(Axis(1), &views).expect("blocks share row count")
        };
        pending.clear();
        *slot = Some(assembled);
    }
    slot.clone().unwrap()
}
