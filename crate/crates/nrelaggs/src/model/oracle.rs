//! Reference forward pass over padded dense tensors.
//!
//! Recomputes scores with none of the production kernels: matrix products
//! are explicit triple loops, and grouping materializes a padded
//! `(parents, max_members, width)` tensor with an equally shaped boolean
//! mask instead of using segment indices. Min and max fold over masked
//! elements only, so padding can never leak into a result; groups with no
//! members yield zeros for all four reductions. Disagreement between this
//! path and [`NRelaggsModel::forward`] indicates a kernel bug.
//!
//! Padding makes memory quadratic in the worst case, so the caller passes a
//! cap on padded elements; exceeding it aborts with
//! [`ModelError::OversizeBatch`].

use ndarray::{Array2, Array3};

use super::NRelaggsModel;
use crate::bundle::BatchBundle;
use crate::error::ModelError;
use crate::neural::{Activation, DenseLayer, Scalar};

/// A generous default for [`forward_dense_oracle`]'s element cap.
pub const DENSE_ORACLE_CAP: usize = 100_000_000;

/// Scores for `batch` computed the slow, obvious way.
pub fn forward_dense_oracle<F: Scalar>(
    model: &NRelaggsModel<F>,
    batch: &BatchBundle<F>,
    cap: usize,
) -> Result<Vec<F>, ModelError> {
    model.check_batch(batch)?;
    let n = model.plan.n_tables();
    let mut padded_elements = 0usize;
    let mut pending: Vec<Vec<Array2<F>>> = vec![Vec::new(); n];

    for step in model.plan.steps() {
        let parent_rows = batch.tables[step.current].data.nrows();
        for &next in &step.nexts {
            let blocks = std::mem::take(&mut pending[next]);
            let combined = concat_columns(&blocks, &batch.tables[next].data);
            let layer = model.layers[next].as_ref().expect("non-target table has a layer");
            let generated = dense_by_loops(&layer.feature_generation, &combined);

            // pad members per parent into a rectangle with a mask
            let members = group_members(&batch.tables[next].parent_ids, parent_rows);
            let max_members = members.iter().map(Vec::len).max().unwrap_or(0);
            let width = generated.ncols();
            padded_elements += parent_rows * max_members * width.max(1);
            if padded_elements > cap {
                return Err(ModelError::OversizeBatch { elements: padded_elements, cap });
            }
            let mut padded: Array3<F> = Array3::zeros((parent_rows, max_members, width));
            let mut mask: Array3<bool> = Array3::from_elem((parent_rows, max_members, width), false);
            for (p, rows) in members.iter().enumerate() {
                for (slot, &r) in rows.iter().enumerate() {
                    for j in 0..width {
                        padded[(p, slot, j)] = generated[(r, j)];
                        mask[(p, slot, j)] = true;
                    }
                }
            }

            // four reductions over the masked rectangle: sum, mean, min, max
            let mut reduced: Array2<F> = Array2::zeros((parent_rows, 4 * width));
            for p in 0..parent_rows {
                for j in 0..width {
                    let mut count = 0usize;
                    let mut sum = F::zero();
                    let mut min: Option<F> = None;
                    let mut max: Option<F> = None;
                    for slot in 0..max_members {
                        if !mask[(p, slot, j)] {
                            continue;
                        }
                        let v = padded[(p, slot, j)];
                        count += 1;
                        sum = sum + v;
                        min = Some(match min {
                            Some(m) if m <= v => m,
                            _ => v,
                        });
                        max = Some(match max {
                            Some(m) if m >= v => m,
                            _ => v,
                        });
                    }
                    reduced[(p, j)] = sum;
                    reduced[(p, width + j)] = if count == 0 {
                        F::zero()
                    } else {
                        sum / F::from_f64(count as f64)
                    };
                    reduced[(p, 2 * width + j)] = min.unwrap_or_else(F::zero);
                    reduced[(p, 3 * width + j)] = max.unwrap_or_else(F::zero);
                }
            }

            let selected = dense_by_loops(&layer.feature_selection, &reduced);
            pending[step.current].push(selected);
        }
    }

    let blocks = std::mem::take(&mut pending[0]);
    let mut x = concat_columns(&blocks, &batch.tables[0].data);
    for layer in &model.predictor {
        x = dense_by_loops(layer, &x);
    }
    Ok(x.column(0).to_vec())
}

/// Member rows of every parent, from a nondecreasing id list.
fn group_members(parent_ids: &[u32], parent_rows: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); parent_rows];
    for (row, &p) in parent_ids.iter().enumerate() {
        members[p as usize].push(row);
    }
    members
}

/// Column-wise concatenation of child blocks followed by raw columns, cell
/// by cell.
fn concat_columns<F: Scalar>(blocks: &[Array2<F>], raw: &Array2<F>) -> Array2<F> {
    let rows = raw.nrows();
    let width: usize = blocks.iter().map(Array2::ncols).sum::<usize>() + raw.ncols();
    let mut out = Array2::zeros((rows, width));
    for r in 0..rows {
        let mut c = 0usize;
        for block in blocks {
            debug_assert_eq!(block.nrows(), rows);
            for j in 0..block.ncols() {
                out[(r, c)] = block[(r, j)];
                c += 1;
            }
        }
        for j in 0..raw.ncols() {
            out[(r, c)] = raw[(r, j)];
            c += 1;
        }
    }
    out
}

/// `act(x·W + b)` with explicit loops; no BLAS, no broadcasting.
fn dense_by_loops<F: Scalar>(layer: &DenseLayer<F>, x: &Array2<F>) -> Array2<F> {
    let (rows, in_dim) = x.dim();
    debug_assert_eq!(in_dim, layer.in_dim());
    let out_dim = layer.out_dim();
    let mut out = Array2::zeros((rows, out_dim));
    for r in 0..rows {
        for o in 0..out_dim {
            let mut acc = layer.bias[o];
            for i in 0..in_dim {
                acc = acc + x[(r, i)] * layer.weights[(i, o)];
            }
            out[(r, o)] = match layer.activation {
                Activation::Linear => acc,
                Activation::Relu => {
                    if acc > F::zero() {
                        acc
                    } else {
                        F::zero()
                    }
                }
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{build_instance, collate};
    use crate::datagen::{synthetic_snowflake, SynthConfig};
    use crate::model::{build_model, ModelConfig};
    use crate::plan::generate_aggregation_plan;
    use crate::preprocess::{fit_preprocessor, LabelMap};

    fn batch_for(instances: usize, seed: u64) -> (BatchBundle<f64>, Vec<usize>, crate::plan::AggregationPlan) {
        let db = synthetic_snowflake(&SynthConfig { instances, seed, ..Default::default() });
        let keys = db.instance_keys();
        let state = fit_preprocessor(&db, &keys).unwrap();
        let plan = generate_aggregation_plan(&db).unwrap();
        let labels = LabelMap::from_database(&db).unwrap();
        let bundles: Vec<_> = keys
            .iter()
            .map(|k| build_instance(&db, &state, &plan, &labels, k).unwrap())
            .collect();
        let encoded: Vec<usize> = (0..plan.n_tables())
            .map(|t| state.width_by_index(plan.db_index(t)))
            .collect();
        (collate(&bundles).unwrap().cast(), encoded, plan)
    }

    #[test]
    fn oracle_matches_the_segment_path() {
        let (batch, encoded, plan) = batch_for(14, 41);
        for (g, s, hidden) in [(1.0, 1.0, vec![8]), (0.5, 0.75, vec![6, 3])] {
            let config = ModelConfig {
                feature_generation_factor: g,
                feature_selection_factor: s,
                predictor_layers: hidden,
                ..Default::default()
            };
            let model = build_model::<f64>(&encoded, &plan, &config, 97).unwrap();
            let fast = model.forward(&batch).unwrap().scores;
            let slow = forward_dense_oracle(&model, &batch, DENSE_ORACLE_CAP).unwrap();
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "segment {a} vs dense {b}");
            }
        }
    }

    #[test]
    fn oracle_handles_empty_groups() {
        // min_events: 0 guarantees some samples with no events at all
        let db = synthetic_snowflake(&SynthConfig {
            instances: 30,
            seed: 2,
            min_events: 0,
            max_events: 2,
            ..Default::default()
        });
        let keys = db.instance_keys();
        let state = fit_preprocessor(&db, &keys).unwrap();
        let plan = generate_aggregation_plan(&db).unwrap();
        let labels = LabelMap::from_database(&db).unwrap();
        let bundles: Vec<_> = keys
            .iter()
            .map(|k| build_instance(&db, &state, &plan, &labels, k).unwrap())
            .collect();
        assert!(
            bundles.iter().any(|b| b.tables.iter().any(|t| t.rows == 0)),
            "fixture should include an instance with an empty table"
        );
        let batch: BatchBundle<f64> = collate(&bundles).unwrap().cast();
        let encoded: Vec<usize> = (0..plan.n_tables())
            .map(|t| state.width_by_index(plan.db_index(t)))
            .collect();
        let model = build_model::<f64>(&encoded, &plan, &ModelConfig::default(), 5).unwrap();
        let fast = model.forward(&batch).unwrap().scores;
        let slow = forward_dense_oracle(&model, &batch, DENSE_ORACLE_CAP).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "segment {a} vs dense {b}");
        }
    }

    #[test]
    fn oversize_batches_are_refused() {
        let (batch, encoded, plan) = batch_for(10, 3);
        let model = build_model::<f64>(&encoded, &plan, &ModelConfig::default(), 1).unwrap();
        assert!(matches!(
            forward_dense_oracle(&model, &batch, 10),
            Err(ModelError::OversizeBatch { cap: 10, .. })
        ));
    }
}
