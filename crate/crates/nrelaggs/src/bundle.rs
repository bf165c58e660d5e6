//! Instance bundles: the tensor form of one target-table row and everything
//! joined to it, plus batch collation and a binary file format.
//!
//! For each plan table, a bundle holds an encoded row matrix and a parallel
//! id vector tying every row to the row of the plan-parent table it was
//! reached from. Multiplicity is preserved: a child row joined to two
//! selected parent rows appears twice, under different parent ids. Batches
//! concatenate instances in order, rebasing ids, which keeps every id vector
//! nondecreasing — the precondition for the segment aggregation kernels.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::PreprocessError;
use crate::neural::Scalar;
use crate::plan::AggregationPlan;
use crate::preprocess::{LabelMap, PreprocessorState};
use crate::schema::RelationalDatabase;

/// One plan table of a single instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTable {
    pub rows: usize,
    pub width: usize,
    /// Plan-local index of the table the ids point into; `None` for the
    /// target table, whose single row attaches to the instance axis.
    pub parent_table: Option<usize>,
    /// Row-major `rows × width` encoded data.
    pub data: Vec<f32>,
    /// For each row, the index (within this instance) of the plan-parent row
    /// it was reached from. For the target table: the single row 0.
    pub parent_ids: Vec<u32>,
}

/// All tensors of one instance, in plan-local table order (target first).
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceBundle {
    pub key: String,
    pub label: String,
    /// Label mapped to the score domain (-1 or +1).
    pub y: f32,
    pub tables: Vec<InstanceTable>,
}

/// Walk the join tree outward from one target row, encoding every reached
/// row. `plan` must come from the same database.
pub fn build_instance(
    db: &RelationalDatabase,
    state: &PreprocessorState,
    plan: &AggregationPlan,
    labels: &LabelMap,
    instance_key: &str,
) -> Result<InstanceBundle, PreprocessError> {
    let target_row = db
        .instance_row(instance_key)
        .ok_or_else(|| PreprocessError::UnknownInstanceKey(instance_key.to_string()))?;
    let label = db.target_label(target_row).to_string();
    let y = labels
        .target_value(&label)
        .ok_or(PreprocessError::NonBinaryTarget(3))?;

    let n = plan.n_tables();
    let parent_table = plan.parent_map();
    let mut tables: Vec<InstanceTable> = (0..n)
        .map(|t| InstanceTable {
            rows: 0,
            width: state.width_by_index(plan.db_index(t)),
            parent_table: parent_table[t],
            data: Vec::new(),
            parent_ids: Vec::new(),
        })
        .collect();
    // db rows selected into each plan table, parallel to its emitted rows
    let mut selected: Vec<Vec<usize>> = vec![Vec::new(); n];

    let target_db = plan.db_index(0);
    push_row(db, state, &mut tables[0], target_db, target_row, 0)?;
    selected[0].push(target_row);

    for step in plan.traversal_steps() {
        let current_db = plan.db_index(step.current);
        for &next in &step.nexts {
            let next_db = plan.db_index(next);
            // split borrows: `selected[step.current]` is read, `tables[next]` written
            let parents = std::mem::take(&mut selected[step.current]);
            for (parent_local, &parent_row) in parents.iter().enumerate() {
                for child_row in db.connected_rows(current_db, parent_row, next_db) {
                    push_row(db, state, &mut tables[next], next_db, child_row, parent_local as u32)?;
                    selected[next].push(child_row);
                }
            }
            selected[step.current] = parents;
        }
    }

    Ok(InstanceBundle { key: instance_key.to_string(), label, y, tables })
}

fn push_row(
    db: &RelationalDatabase,
    state: &PreprocessorState,
    table: &mut InstanceTable,
    db_table: usize,
    db_row: usize,
    parent_id: u32,
) -> Result<(), PreprocessError> {
    let encoded = state.encode_row_by_index(db_table, &db.table(db_table).rows()[db_row], db_row)?;
    debug_assert_eq!(encoded.len(), table.width);
    table.data.extend_from_slice(&encoded);
    table.parent_ids.push(parent_id);
    table.rows += 1;
    Ok(())
}

/// One plan table of a collated batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTable<F: Scalar = f32> {
    /// `rows × width` encoded data (rows from all instances, in order).
    pub data: Array2<F>,
    /// Plan-parent row index within the batch, nondecreasing. For the target
    /// table this is the instance index itself.
    pub parent_ids: Vec<u32>,
    /// Which instance each row belongs to.
    pub instance_of: Vec<u32>,
}

/// A batch of instances in tensor form, ready for the models.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchBundle<F: Scalar = f32> {
    pub tables: Vec<BatchTable<F>>,
    pub n_instances: usize,
    /// Targets in the score domain (-1/+1), one per instance.
    pub labels: Vec<F>,
    pub keys: Vec<String>,
}

impl<F: Scalar> BatchBundle<F> {
    /// Wrap a plain feature matrix (one row per instance) as a single-table
    /// batch, the shape produced by [`crate::plan::AggregationPlan::single_table`].
    pub fn from_matrix(data: Array2<F>, labels: Vec<F>, keys: Vec<String>) -> BatchBundle<F> {
        let n = data.nrows();
        assert_eq!(labels.len(), n, "one label per row");
        assert_eq!(keys.len(), n, "one key per row");
        BatchBundle {
            tables: vec![BatchTable {
                data,
                parent_ids: (0..n as u32).collect(),
                instance_of: (0..n as u32).collect(),
            }],
            n_instances: n,
            labels,
            keys,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.data.ncols()).collect()
    }

    /// Convert element type, e.g. to shadow an `f32` batch in `f64`.
    pub fn cast<G: Scalar>(&self) -> BatchBundle<G> {
        BatchBundle {
            tables: self
                .tables
                .iter()
                .map(|t| BatchTable {
                    data: t.data.mapv(|v| G::from_f64(v.to_f64())),
                    parent_ids: t.parent_ids.clone(),
                    instance_of: t.instance_of.clone(),
                })
                .collect(),
            n_instances: self.n_instances,
            labels: self.labels.iter().map(|&y| G::from_f64(y.to_f64())).collect(),
            keys: self.keys.clone(),
        }
    }
}

/// Concatenate instances into one batch, rebasing parent ids. All bundles
/// must share table count and widths.
pub fn collate(bundles: &[InstanceBundle]) -> Result<BatchBundle, PreprocessError> {
    let Some(first) = bundles.first() else {
        return Ok(BatchBundle {
            tables: Vec::new(),
            n_instances: 0,
            labels: Vec::new(),
            keys: Vec::new(),
        });
    };
    let n_tables = first.tables.len();
    let widths: Vec<usize> = first.tables.iter().map(|t| t.width).collect();
    for b in bundles {
        if b.tables.len() != n_tables {
            return Err(PreprocessError::IncompatibleWidths {
                table: "<bundle>".into(),
                expected: n_tables,
                found: b.tables.len(),
            });
        }
        for (t, it) in b.tables.iter().enumerate() {
            if it.width != widths[t] || it.parent_table != first.tables[t].parent_table {
                return Err(PreprocessError::IncompatibleWidths {
                    table: format!("plan table {t}"),
                    expected: widths[t],
                    found: it.width,
                });
            }
        }
    }

    let mut tables = Vec::with_capacity(n_tables);
    for t in 0..n_tables {
        let total_rows: usize = bundles.iter().map(|b| b.tables[t].rows).sum();
        let mut data = Vec::with_capacity(total_rows * widths[t]);
        let mut parent_ids = Vec::with_capacity(total_rows);
        let mut instance_of = Vec::with_capacity(total_rows);
        let mut parent_offset = 0u32;
        for (i, b) in bundles.iter().enumerate() {
            let it = &b.tables[t];
            data.extend_from_slice(&it.data);
            parent_ids.extend(it.parent_ids.iter().map(|&p| p + parent_offset));
            instance_of.extend(std::iter::repeat(i as u32).take(it.rows));
            // ids index the plan-parent table; the target's "parent" is the
            // instance axis, which grows by one per instance
            parent_offset += match it.parent_table {
                None => 1,
                Some(p) => b.tables[p].rows as u32,
            };
        }
        let data = Array2::from_shape_vec((total_rows, widths[t]), data)
            .expect("row count times width matches data length");
        tables.push(BatchTable { data, parent_ids, instance_of });
    }

    Ok(BatchBundle {
        tables,
        n_instances: bundles.len(),
        labels: bundles.iter().map(|b| b.y).collect(),
        keys: bundles.iter().map(|b| b.key.clone()).collect(),
    })
}

const BUNDLE_MAGIC: &[u8; 4] = b"NRBB";
const BUNDLE_VERSION: u32 = 1;

/// Write a batch to the documented binary container: per table a dims header,
/// row-major f32 data, then the two u32 id vectors; all little-endian.
pub fn write_bundle_file(
    path: &Path,
    batch: &BatchBundle,
    plan_fingerprint: &str,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(BUNDLE_MAGIC)?;
    w.write_all(&BUNDLE_VERSION.to_le_bytes())?;
    write_str(&mut w, plan_fingerprint)?;
    w.write_all(&(batch.n_instances as u64).to_le_bytes())?;
    w.write_all(&(batch.tables.len() as u32).to_le_bytes())?;
    for &y in &batch.labels {
        w.write_all(&y.to_le_bytes())?;
    }
    for key in &batch.keys {
        write_str(&mut w, key)?;
    }
    for table in &batch.tables {
        w.write_all(&(table.data.nrows() as u64).to_le_bytes())?;
        w.write_all(&(table.data.ncols() as u32).to_le_bytes())?;
        for &v in table.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for &id in &table.parent_ids {
            w.write_all(&id.to_le_bytes())?;
        }
        for &id in &table.instance_of {
            w.write_all(&id.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Read a batch written by [`write_bundle_file`]; returns the batch and the
/// plan fingerprint recorded in the header.
pub fn read_bundle_file(path: &Path) -> std::io::Result<(BatchBundle, String)> {
    use std::io::{Error, ErrorKind};
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BUNDLE_MAGIC {
        return Err(Error::new(ErrorKind::InvalidData, "not a bundle file"));
    }
    let version = read_u32(&mut r)?;
    if version != BUNDLE_VERSION {
        return Err(Error::new(
            ErrorKind::InvalidData,
            format!("unsupported bundle version {version}"),
        ));
    }
    let fingerprint = read_str(&mut r)?;
    let n_instances = read_u64(&mut r)? as usize;
    let n_tables = read_u32(&mut r)? as usize;
    let mut labels = Vec::with_capacity(n_instances);
    for _ in 0..n_instances {
        labels.push(read_f32(&mut r)?);
    }
    let mut keys = Vec::with_capacity(n_instances);
    for _ in 0..n_instances {
        keys.push(read_str(&mut r)?);
    }
    let mut tables = Vec::with_capacity(n_tables);
    for _ in 0..n_tables {
        let rows = read_u64(&mut r)? as usize;
        let width = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * width);
        for _ in 0..rows * width {
            data.push(read_f32(&mut r)?);
        }
        let mut parent_ids = Vec::with_capacity(rows);
        for _ in 0..rows {
            parent_ids.push(read_u32(&mut r)?);
        }
        let mut instance_of = Vec::with_capacity(rows);
        for _ in 0..rows {
            instance_of.push(read_u32(&mut r)?);
        }
        let data = Array2::from_shape_vec((rows, width), data)
            .map_err(|e| Error::new(ErrorKind::InvalidData, e.to_string()))?;
        tables.push(BatchTable { data, parent_ids, instance_of });
    }
    Ok((BatchBundle { tables, n_instances, labels, keys }, fingerprint))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> std::io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synthetic_snowflake, SynthConfig};
    use crate::plan::generate_aggregation_plan;
    use crate::preprocess::fit_preprocessor;

    fn trains_setup() -> (RelationalDatabase, PreprocessorState, AggregationPlan, LabelMap) {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/trains");
        let db = RelationalDatabase::load(&dir.join("schema.json"), &dir).unwrap();
        let keys = db.instance_keys();
        let state = fit_preprocessor(&db, &keys).unwrap();
        let plan = generate_aggregation_plan(&db).unwrap();
        let labels = LabelMap::from_database(&db).unwrap();
        (db, state, plan, labels)
    }

    #[test]
    fn instance_holds_target_row_and_its_children() {
        let (db, state, plan, labels) = trains_setup();
        let b = build_instance(&db, &state, &plan, &labels, "1").unwrap();
        assert_eq!(b.tables[0].rows, 1);
        assert_eq!(b.tables[0].parent_ids, vec![0]);
        assert_eq!(b.tables[1].rows, 4, "train 1 pulls four cars");
        assert_eq!(b.tables[1].parent_ids, vec![0, 0, 0, 0]);
        assert_eq!(b.label, "east");
        assert_eq!(b.y, -1.0, "east sorts before west");
        // encoded width: trains has only key+target → 0 columns
        assert_eq!(b.tables[0].width, 0);
        assert_eq!(b.tables[1].width, state.width("cars").unwrap());
    }

    #[test]
    fn unknown_instance_key_is_rejected() {
        let (db, state, plan, labels) = trains_setup();
        assert!(matches!(
            build_instance(&db, &state, &plan, &labels, "99"),
            Err(PreprocessError::UnknownInstanceKey(_))
        ));
    }

    #[test]
    fn collate_rebases_parent_ids_per_instance() {
        let (db, state, plan, labels) = trains_setup();
        let bundles: Vec<_> = ["1", "2", "11"]
            .iter()
            .map(|k| build_instance(&db, &state, &plan, &labels, k).unwrap())
            .collect();
        let batch = collate(&bundles).unwrap();
        assert_eq!(batch.n_instances, 3);
        assert_eq!(batch.labels, vec![-1.0, -1.0, 1.0]);
        // trains 1, 2, 11 pull 4, 3, 2 cars
        assert_eq!(batch.tables[1].data.nrows(), 9);
        assert_eq!(batch.tables[1].parent_ids, vec![0, 0, 0, 0, 1, 1, 1, 2, 2]);
        assert_eq!(batch.tables[1].instance_of, vec![0, 0, 0, 0, 1, 1, 1, 2, 2]);
        assert_eq!(batch.tables[0].parent_ids, vec![0, 1, 2]);
    }

    #[test]
    fn collate_of_nothing_is_an_empty_batch() {
        let batch = collate(&[]).unwrap();
        assert_eq!(batch.n_instances, 0);
        assert!(batch.tables.is_empty());
    }

    #[test]
    fn multi_hop_ids_stay_nondecreasing_and_in_range() {
        let db = synthetic_snowflake(&SynthConfig { instances: 30, seed: 21, ..Default::default() });
        let keys = db.instance_keys();
        let state = fit_preprocessor(&db, &keys).unwrap();
        let plan = generate_aggregation_plan(&db).unwrap();
        let labels = LabelMap::from_database(&db).unwrap();
        let bundles: Vec<_> = keys
            .iter()
            .map(|k| build_instance(&db, &state, &plan, &labels, k).unwrap())
            .collect();
        let batch = collate(&bundles).unwrap();
        let parents = plan.parent_map();
        for t in 1..batch.tables.len() {
            let bound = batch.tables[parents[t].unwrap()].data.nrows() as u32;
            let ids = &batch.tables[t].parent_ids;
            for w in ids.windows(2) {
                assert!(w[0] <= w[1], "ids must be nondecreasing");
            }
            assert!(ids.iter().all(|&id| id < bound.max(1)));
        }
    }

    #[test]
    fn bundle_file_round_trips() {
        let (db, state, plan, labels) = trains_setup();
        let bundles: Vec<_> = db
            .instance_keys()
            .iter()
            .map(|k| build_instance(&db, &state, &plan, &labels, k).unwrap())
            .collect();
        let batch = collate(&bundles).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("batch.bin");
        write_bundle_file(&path, &batch, &plan.fingerprint()).unwrap();
        let (back, fp) = read_bundle_file(&path).unwrap();
        assert_eq!(fp, plan.fingerprint());
        assert_eq!(back, batch);
    }
}
