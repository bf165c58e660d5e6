//! Column preprocessing: z-scoring for numerics, one-hot for categoricals.
//!
//! Statistics are fit on the rows reachable from a chosen set of training
//! instances only, so that test data never leaks into scaling or
//! vocabularies. The fitted state is serializable and travels inside model
//! checkpoints.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::PreprocessError;
use crate::plan::generate_aggregation_plan;
use crate::schema::{ColumnKind, RelationalDatabase};

/// Smallest standard deviation used for scaling; constant columns divide by
/// this instead of zero.
pub const MIN_STD: f64 = 1e-12;

/// Fitted transform for one source column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum ColumnEncoder {
    /// `(value - mean) / std`; null encodes to 0 (the training mean).
    ZScore { column: usize, mean: f64, std: f64 },
    /// One column per vocabulary entry, in sorted order; null or unseen
    /// values encode to all zeros.
    OneHot { column: usize, vocabulary: Vec<String> },
}

impl ColumnEncoder {
    fn width(&self) -> usize {
        match self {
            ColumnEncoder::ZScore { .. } => 1,
            ColumnEncoder::OneHot { vocabulary, .. } => vocabulary.len(),
        }
    }
}

/// All fitted encoders of one table, in column-declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEncoder {
    pub table: String,
    n_columns: usize,
    encoders: Vec<ColumnEncoder>,
    width: usize,
}

/// Fitted preprocessing state for a whole database (tables in descriptor
/// order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessorState {
    tables: Vec<TableEncoder>,
}

impl PreprocessorState {
    /// Encoded (propositional) width of a table: one column per numeric
    /// attribute plus one per vocabulary entry. Keys, foreign keys, and the
    /// target attribute contribute nothing.
    pub fn width(&self, table: &str) -> Result<usize, PreprocessError> {
        self.encoder_for(table).map(|e| e.width)
    }

    pub fn width_by_index(&self, table_idx: usize) -> usize {
        self.tables[table_idx].width
    }

    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }

    fn encoder_for(&self, table: &str) -> Result<&TableEncoder, PreprocessError> {
        self.tables
            .iter()
            .find(|t| t.table == table)
            .ok_or_else(|| PreprocessError::UnknownTable(table.to_string()))
    }

    /// Encode one raw row (cells as strings, empty = null) of the named
    /// table into its feature vector.
    pub fn encode_row(&self, table: &str, cells: &[String]) -> Result<Vec<f32>, PreprocessError> {
        let encoder = self.encoder_for(table)?;
        Self::encode_with(encoder, cells, 0)
    }

    /// Same as [`Self::encode_row`] with the table resolved by index.
    pub fn encode_row_by_index(
        &self,
        table_idx: usize,
        cells: &[String],
        row: usize,
    ) -> Result<Vec<f32>, PreprocessError> {
        Self::encode_with(&self.tables[table_idx], cells, row)
    }

    fn encode_with(
        encoder: &TableEncoder,
        cells: &[String],
        row: usize,
    ) -> Result<Vec<f32>, PreprocessError> {
        if cells.len() != encoder.n_columns {
            return Err(PreprocessError::RowShape {
                table: encoder.table.clone(),
                row,
                expected: encoder.n_columns,
                found: cells.len(),
            });
        }
        let mut out = Vec::with_capacity(encoder.width);
        for e in &encoder.encoders {
            match e {
                ColumnEncoder::ZScore { column, mean, std } => {
                    let cell = cells[*column].as_str();
                    if cell.is_empty() {
                        out.push(0.0);
                    } else {
                        let v: f64 = cell.trim().parse().map_err(|_| PreprocessError::RowShape {
                            table: encoder.table.clone(),
                            row,
                            expected: encoder.n_columns,
                            found: cells.len(),
                        })?;
                        out.push(((v - mean) / std) as f32);
                    }
                }
                ColumnEncoder::OneHot { column, vocabulary } => {
                    let cell = cells[*column].as_str();
                    let hit = if cell.is_empty() {
                        None
                    } else {
                        vocabulary.binary_search_by(|v| v.as_str().cmp(cell)).ok()
                    };
                    let start = out.len();
                    out.resize(start + vocabulary.len(), 0.0);
                    if let Some(i) = hit {
                        out[start + i] = 1.0;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Fit encoders on the rows reachable (through the join tree) from the given
/// training instances. A row reachable from several training instances is
/// counted once.
pub fn fit_preprocessor(
    db: &RelationalDatabase,
    train_instance_keys: &[String],
) -> Result<PreprocessorState, PreprocessError> {
    if train_instance_keys.is_empty() {
        return Err(PreprocessError::EmptyTrainSet);
    }
    let plan = generate_aggregation_plan(db).expect("validated database yields a plan");

    // rows reachable from the training instances, per db table, deduplicated
    let mut reachable: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); db.n_tables()];
    for key in train_instance_keys {
        let row = db
            .instance_row(key)
            .ok_or_else(|| PreprocessError::UnknownInstanceKey(key.clone()))?;
        reachable[db.target_table_index()].insert(row);
    }
    for step in plan.traversal_steps() {
        let current_db = plan.db_index(step.current);
        for &next in &step.nexts {
            let next_db = plan.db_index(next);
            let mut rows = BTreeSet::new();
            for &r in &reachable[current_db] {
                rows.extend(db.connected_rows(current_db, r, next_db));
            }
            reachable[next_db] = rows;
        }
    }

    let mut tables = Vec::with_capacity(db.n_tables());
    for (t, table) in db.tables().iter().enumerate() {
        let is_target = t == db.target_table_index();
        let mut encoders = Vec::new();
        for (c, col) in table.spec().columns.iter().enumerate() {
            if is_target && c == db.target_column_index() {
                continue;
            }
            match col.kind {
                ColumnKind::Key | ColumnKind::ForeignKey(_) => continue,
                ColumnKind::Numeric => {
                    let values: Vec<f64> = reachable[t]
                        .iter()
                        .filter_map(|&r| table.cell(r, c))
                        .map(|v| v.trim().parse::<f64>().expect("validated at load"))
                        .collect();
                    let n = values.len() as f64;
                    let mean = if values.is_empty() {
                        0.0
                    } else {
                        values.iter().sum::<f64>() / n
                    };
                    let variance = if values.is_empty() {
                        0.0
                    } else {
                        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
                    };
                    let std = variance.sqrt().max(MIN_STD);
                    encoders.push(ColumnEncoder::ZScore { column: c, mean, std });
                }
                ColumnKind::Categorical => {
                    let vocabulary: Vec<String> = reachable[t]
                        .iter()
                        .filter_map(|&r| table.cell(r, c))
                        .map(str::to_string)
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    encoders.push(ColumnEncoder::OneHot { column: c, vocabulary });
                }
            }
        }
        let width = encoders.iter().map(ColumnEncoder::width).sum();
        tables.push(TableEncoder {
            table: table.name().to_string(),
            n_columns: table.n_columns(),
            encoders,
            width,
        });
    }
    Ok(PreprocessorState { tables })
}

/// Maps the two class labels to the score domain: lexicographically first
/// label → -1, second → +1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub negative: String,
    pub positive: String,
}

impl LabelMap {
    pub fn from_database(db: &RelationalDatabase) -> Result<Self, PreprocessError> {
        let classes: Vec<String> = db.class_distribution().into_keys().collect();
        if classes.len() != 2 {
            return Err(PreprocessError::NonBinaryTarget(classes.len()));
        }
        let mut it = classes.into_iter();
        Ok(LabelMap { negative: it.next().unwrap(), positive: it.next().unwrap() })
    }

    pub fn target_value(&self, label: &str) -> Option<f32> {
        if label == self.negative {
            Some(-1.0)
        } else if label == self.positive {
            Some(1.0)
        } else {
            None
        }
    }

    /// Predicted label for a raw score; a score of exactly zero goes to the
    /// positive class.
    pub fn label_for_score(&self, score: f32) -> &str {
        if score >= 0.0 {
            &self.positive
        } else {
            &self.negative
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnSpec, SchemaDescriptor, TableSpec};

    fn two_table_db(child_rows: &[&[&str]], parent_rows: &[&[&str]]) -> RelationalDatabase {
        let desc = SchemaDescriptor {
            tables: vec![
                TableSpec {
                    name: "child".into(),
                    file: "child.csv".into(),
                    columns: vec![
                        ColumnSpec::foreign_key("pid", "parent"),
                        ColumnSpec::numeric("x"),
                        ColumnSpec::categorical("color"),
                    ],
                },
                TableSpec {
                    name: "parent".into(),
                    file: "parent.csv".into(),
                    columns: vec![
                        ColumnSpec::key("id"),
                        ColumnSpec::numeric("size"),
                        ColumnSpec::categorical("label"),
                    ],
                },
            ],
            target_table: "parent".into(),
            target_attribute: "label".into(),
        };
        let to_rows = |t: &[&[&str]]| {
            t.iter()
                .map(|r| r.iter().map(|c| c.to_string()).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        RelationalDatabase::from_parts(desc, vec![to_rows(child_rows), to_rows(parent_rows)])
            .unwrap()
    }

    #[test]
    fn zscore_uses_population_std_of_training_rows() {
        let db = two_table_db(
            &[],
            &[&["p1", "2", "a"], &["p2", "4", "b"]],
        );
        let state = fit_preprocessor(&db, &["p1".into(), "p2".into()]).unwrap();
        // values {2,4}: mean 3, population std 1
        let lo = state.encode_row("parent", &row(&["p1", "2", "a"])).unwrap();
        let hi = state.encode_row("parent", &row(&["p2", "4", "b"])).unwrap();
        assert_eq!(lo, vec![-1.0]);
        assert_eq!(hi, vec![1.0]);
    }

    fn row(cells: &[&str]) -> Vec<String> {
        cells.iter().map(|c| c.to_string()).collect()
    }

    #[test]
    fn constant_column_encodes_to_zero() {
        let db = two_table_db(&[], &[&["p1", "5", "a"], &["p2", "5", "b"]]);
        let state = fit_preprocessor(&db, &["p1".into(), "p2".into()]).unwrap();
        let v = state.encode_row("parent", &row(&["p1", "5", "a"])).unwrap();
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn one_hot_vocabulary_is_sorted_and_unseen_is_zero() {
        let db = two_table_db(
            &[
                &["p1", "1", "red"],
                &["p1", "2", "blue"],
                &["p2", "3", "green"],
            ],
            &[&["p1", "0", "a"], &["p2", "0", "b"]],
        );
        let state = fit_preprocessor(&db, &["p1".into(), "p2".into()]).unwrap();
        // vocabulary sorted: [blue, green, red] — plus the numeric column first
        assert_eq!(state.width("child").unwrap(), 4);
        let red = state.encode_row("child", &row(&["p1", "1", "red"])).unwrap();
        assert_eq!(&red[1..], &[0.0, 0.0, 1.0]);
        let unseen = state.encode_row("child", &row(&["p1", "1", "violet"])).unwrap();
        assert_eq!(&unseen[1..], &[0.0, 0.0, 0.0]);
        let null = state.encode_row("child", &row(&["p1", "1", ""])).unwrap();
        assert_eq!(&null[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn null_numeric_encodes_to_the_training_mean() {
        let db = two_table_db(
            &[&["p1", "2", "red"], &["p2", "4", "red"]],
            &[&["p1", "0", "a"], &["p2", "0", "b"]],
        );
        let state = fit_preprocessor(&db, &["p1".into(), "p2".into()]).unwrap();
        let v = state.encode_row("child", &row(&["p1", "", "red"])).unwrap();
        assert_eq!(v[0], 0.0); // (mean - mean) / std
    }

    #[test]
    fn rows_unreachable_from_training_instances_do_not_shape_statistics() {
        let db = two_table_db(
            &[&["p1", "2", "red"], &["p2", "100", "violet"]],
            &[&["p1", "0", "a"], &["p2", "0", "b"]],
        );
        // fit only on p1: the p2 child row (x=100, violet) must not leak in
        let state = fit_preprocessor(&db, &["p1".into()]).unwrap();
        assert_eq!(state.width("child").unwrap(), 2); // x + {red}
        let v = state.encode_row("child", &row(&["p2", "100", "violet"])).unwrap();
        assert_eq!(v[1], 0.0, "violet is out of vocabulary");
    }

    #[test]
    fn keys_foreign_keys_and_target_are_excluded() {
        let db = two_table_db(
            &[&["p1", "1", "red"]],
            &[&["p1", "3", "a"], &["p2", "4", "b"]],
        );
        let state = fit_preprocessor(&db, &["p1".into(), "p2".into()]).unwrap();
        // parent: key + target excluded, only `size` remains
        assert_eq!(state.width("parent").unwrap(), 1);
        // child: fk excluded → numeric + one-hot{red}
        assert_eq!(state.width("child").unwrap(), 2);
        assert!(state.width("nope").is_err());
    }

    #[test]
    fn fit_rejects_empty_or_unknown_training_keys() {
        let db = two_table_db(&[], &[&["p1", "1", "a"], &["p2", "2", "b"]]);
        assert!(matches!(
            fit_preprocessor(&db, &[]),
            Err(PreprocessError::EmptyTrainSet)
        ));
        assert!(matches!(
            fit_preprocessor(&db, &["zz".into()]),
            Err(PreprocessError::UnknownInstanceKey(_))
        ));
    }

    #[test]
    fn fit_is_independent_of_training_key_order() {
        let db = two_table_db(
            &[&["p1", "1", "red"], &["p2", "2", "blue"]],
            &[&["p1", "3", "a"], &["p2", "4", "b"]],
        );
        let a = fit_preprocessor(&db, &["p1".into(), "p2".into()]).unwrap();
        let b = fit_preprocessor(&db, &["p2".into(), "p1".into()]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn label_map_is_lexicographic_and_total() {
        let db = two_table_db(&[], &[&["p1", "1", "west"], &["p2", "2", "east"]]);
        let map = LabelMap::from_database(&db).unwrap();
        assert_eq!(map.negative, "east");
        assert_eq!(map.positive, "west");
        assert_eq!(map.target_value("east"), Some(-1.0));
        assert_eq!(map.target_value("west"), Some(1.0));
        assert_eq!(map.target_value("north"), None);
        assert_eq!(map.label_for_score(0.0), "west", "tie goes positive");
        assert_eq!(map.label_for_score(-0.1), "east");
    }

    #[test]
    fn state_round_trips_through_json() {
        let db = two_table_db(
            &[&["p1", "1", "red"], &["p2", "2", "blue"]],
            &[&["p1", "3", "a"], &["p2", "4", "b"]],
        );
        let state = fit_preprocessor(&db, &["p1".into(), "p2".into()]).unwrap();
        let json = serde_json::to_string(&state).unwrap();
        let back: PreprocessorState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, state);
    }
}
