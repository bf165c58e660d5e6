//! Static nested propositionalization: recursively augment every table with
//! per-group aggregates of its children, then read off the target table.
//!
//! Each fold step widens the parent by five blocks per child — average,
//! maximum, minimum, standard deviation, sum — each as wide as the child's
//! (already augmented) matrix. Empty groups contribute zero blocks. The
//! sum/mean/min/max reductions are the same segment kernels the trainable
//! layers use; only the standard deviation is specific to this module.

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::bundle::BatchBundle;
use crate::error::{ModelError, NeuralError};
use crate::neural::{segment_aggregate, SegmentIndex, SegmentKind};
use crate::plan::AggregationPlan;

/// Aggregate block order within each child's contribution.
pub const STATIC_AGGREGATES: [&str; 5] = ["average", "maximum", "minimum", "stddev", "sum"];

/// Propositionalized feature width of every plan table after augmentation:
/// `width(t) = encoded(t) + Σ_children 5·width(child)`. Index 0 is the
/// target table, i.e. the final feature dimensionality.
pub fn augmented_widths(encoded: &[usize], plan: &AggregationPlan) -> Vec<usize> {
    let mut widths = encoded.to_vec();
    for step in plan.steps() {
        let extra: usize = step.nexts.iter().map(|&n| 5 * widths[n]).sum();
        widths[step.current] += extra;
    }
    widths
}

/// Run the full nested aggregation over a collated batch; returns the
/// `n_instances × width` feature matrix of the target table.
pub fn relaggs_matrix(
    batch: &BatchBundle,
    plan: &AggregationPlan,
) -> Result<Array2<f32>, ModelError> {
    if batch.tables.len() != plan.n_tables() {
        return Err(ModelError::PlanMismatch(format!(
            "batch has {} tables, plan {}",
            batch.tables.len(),
            plan.n_tables()
        )));
    }
    let mut working: Vec<Array2<f32>> =
        batch.tables.iter().map(|t| t.data.to_owned()).collect();

    for step in plan.steps() {
        let parent_rows = working[step.current].nrows();
        let mut blocks = vec![working[step.current].clone()];
        for &next in &step.nexts {
            let seg = SegmentIndex::new(batch.tables[next].parent_ids.clone(), parent_rows)?;
            let child = working[next].view();
            blocks.push(segment_aggregate(&child, &seg, SegmentKind::Mean)?);
            blocks.push(segment_aggregate(&child, &seg, SegmentKind::Max)?);
            blocks.push(segment_aggregate(&child, &seg, SegmentKind::Min)?);
            blocks.push(segment_std(&child, &seg)?);
            blocks.push(segment_aggregate(&child, &seg, SegmentKind::Sum)?);
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        working[step.current] =
            concatenate(Axis(1), &views).expect("blocks share the parent's row count");
    }
    Ok(working.swap_remove(0))
}

/// Population standard deviation per segment and column (√(Σ(x-mean)²/m));
/// 0 for empty and single-row groups.
fn segment_std(x: &ArrayView2<f32>, seg: &SegmentIndex) -> Result<Array2<f32>, NeuralError> {
    let mean = segment_aggregate(x, seg, SegmentKind::Mean)?;
    let d = x.ncols();
    let mut out = Array2::zeros((seg.n_segments(), d));
    for (s, range) in seg.bounds().into_iter().enumerate() {
        let m = range.len();
        if m <= 1 {
            continue;
        }
        for j in 0..d {
            let mu = mean[(s, j)];
            let mut acc = 0.0f32;
            for r in range.clone() {
                let diff = x[(r, j)] - mu;
                acc += diff * diff;
            }
            out[(s, j)] = (acc / m as f32).sqrt();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{build_instance, collate};
    use crate::datagen::{synthetic_snowflake, SynthConfig};
    use crate::plan::generate_aggregation_plan;
    use crate::preprocess::{fit_preprocessor, LabelMap};
    use crate::schema::RelationalDatabase;

    fn trains_batch() -> (RelationalDatabase, BatchBundle, AggregationPlan, Vec<usize>) {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/trains");
        let db = RelationalDatabase::load(&dir.join("schema.json"), &dir).unwrap();
        let keys = db.instance_keys();
        let state = fit_preprocessor(&db, &keys).unwrap();
        let plan = generate_aggregation_plan(&db).unwrap();
        let labels = LabelMap::from_database(&db).unwrap();
        let bundles: Vec<_> = keys
            .iter()
            .map(|k| build_instance(&db, &state, &plan, &labels, k).unwrap())
            .collect();
        let batch = collate(&bundles).unwrap();
        let encoded: Vec<usize> = (0..plan.n_tables())
            .map(|t| state.width_by_index(plan.db_index(t)))
            .collect();
        (db, batch, plan, encoded)
    }

    #[test]
    fn feature_width_follows_the_width_recursion() {
        let (_, batch, plan, encoded) = trains_batch();
        let widths = augmented_widths(&encoded, &plan);
        assert_eq!(widths[0], encoded[0] + 5 * encoded[1]);
        let features = relaggs_matrix(&batch, &plan).unwrap();
        assert_eq!(features.dim(), (20, widths[0]));
    }

    #[test]
    fn matches_brute_force_group_by_on_trains() {
        let (_, batch, plan, encoded) = trains_batch();
        let features = relaggs_matrix(&batch, &plan).unwrap();
        let cars = &batch.tables[1];
        let d = encoded[1];
        for i in 0..batch.n_instances {
            let rows: Vec<usize> = cars
                .parent_ids
                .iter()
                .enumerate()
                .filter(|&(_, &p)| p as usize == i)
                .map(|(r, _)| r)
                .collect();
            for j in 0..d {
                let values: Vec<f32> = rows.iter().map(|&r| cars.data[(r, j)]).collect();
                let m = values.len() as f32;
                let sum: f32 = values.iter().sum();
                let mean = sum / m;
                let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let min = values.iter().copied().fold(f32::INFINITY, f32::min);
                let var: f32 =
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / m;
                // block layout: [average | maximum | minimum | stddev | sum]
                assert_eq!(features[(i, j)], mean, "average i={i} j={j}");
                assert_eq!(features[(i, d + j)], max, "maximum i={i} j={j}");
                assert_eq!(features[(i, 2 * d + j)], min, "minimum i={i} j={j}");
                let std_err = (features[(i, 3 * d + j)] - var.sqrt()).abs();
                assert!(std_err <= 1e-6, "stddev i={i} j={j} err={std_err}");
                assert_eq!(features[(i, 4 * d + j)], sum, "sum i={i} j={j}");
            }
        }
    }

    #[test]
    fn empty_groups_produce_zero_blocks() {
        // synthetic data has zero-event samples; their aggregate block must
        // be exactly zero, including min/max of otherwise-negative columns
        let db = synthetic_snowflake(&SynthConfig { instances: 40, seed: 13, ..Default::default() });
        let keys = db.instance_keys();
        let state = fit_preprocessor(&db, &keys).unwrap();
        let plan = generate_aggregation_plan(&db).unwrap();
        let labels = LabelMap::from_database(&db).unwrap();
        let bundles: Vec<_> = keys
            .iter()
            .map(|k| build_instance(&db, &state, &plan, &labels, k).unwrap())
            .collect();
        let batch = collate(&bundles).unwrap();
        let features = relaggs_matrix(&batch, &plan).unwrap();

        let events_plan_idx = plan.table_order().iter().position(|n| n == "events").unwrap();
        let empties: Vec<usize> = (0..batch.n_instances)
            .filter(|&i| {
                !batch.tables[events_plan_idx]
                    .parent_ids
                    .iter()
                    .zip(&batch.tables[events_plan_idx].instance_of)
                    .any(|(_, &inst)| inst as usize == i)
            })
            .collect();
        assert!(!empties.is_empty(), "generator should produce event-free samples");
        let enc_target = state.width("samples").unwrap();
        for &i in &empties {
            // everything beyond the raw target columns comes from children
            for j in enc_target..features.ncols() {
                assert_eq!(features[(i, j)], 0.0, "instance {i} column {j}");
            }
        }
    }

    #[test]
    fn std_block_is_population_form() {
        let x = ndarray::array![[2.0f32], [4.0]];
        let seg = SegmentIndex::new(vec![0, 0], 1).unwrap();
        let std = segment_std(&x.view(), &seg).unwrap();
        assert_eq!(std[(0, 0)], 1.0); // population σ of {2,4}
        // single-row group → 0
        let seg1 = SegmentIndex::new(vec![0, 1], 2).unwrap();
        let std1 = segment_std(&x.view(), &seg1).unwrap();
        assert_eq!(std1, ndarray::array![[0.0f32], [0.0]]);
    }

    #[test]
    fn plan_mismatch_is_rejected() {
        let (_, batch, _, _) = trains_batch();
        let other = generate_aggregation_plan(&crate::datagen::movielens_schema()).unwrap();
        assert!(matches!(
            relaggs_matrix(&batch, &other),
            Err(ModelError::PlanMismatch(_))
        ));
    }
}
