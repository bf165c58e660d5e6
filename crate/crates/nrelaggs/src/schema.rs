//! Relational schema descriptors and in-memory databases.
//!
//! A database is a set of CSV-backed tables wired together by foreign keys.
//! The join graph reachable from the target table must be a tree (star or
//! snowflake); that property is what makes the nested-aggregation plans in
//! [`crate::plan`] well-defined.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SchemaError;

/// What a column holds and how the pipeline treats it.
///
/// `Key` and `ForeignKey` columns define the join structure and are never
/// encoded as features; the target attribute is likewise excluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Key,
    /// Holds key values of the named table.
    ForeignKey(String),
}

/// One column of a table descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawColumn", into = "RawColumn")]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Serialized form of a column: `kind` is a plain string and the foreign-key
/// target sits in a sibling `references` field.
#[derive(Serialize, Deserialize)]
struct RawColumn {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    references: Option<String>,
}

impl TryFrom<RawColumn> for ColumnSpec {
    type Error = String;

    fn try_from(raw: RawColumn) -> Result<Self, String> {
        let kind = match (raw.kind.as_str(), raw.references) {
            ("numeric", None) => ColumnKind::Numeric,
            ("categorical", None) => ColumnKind::Categorical,
            ("key", None) => ColumnKind::Key,
            ("foreign_key", Some(t)) => ColumnKind::ForeignKey(t),
            ("foreign_key", None) => {
                return Err(format!("column `{}`: foreign_key needs `references`", raw.name))
            }
            (other, Some(_)) => {
                return Err(format!(
                    "column `{}`: `references` is only valid on foreign_key, not `{other}`",
                    raw.name
                ))
            }
            (other, None) => return Err(format!("column `{}`: unknown kind `{other}`", raw.name)),
        };
        Ok(ColumnSpec { name: raw.name, kind })
    }
}

impl From<ColumnSpec> for RawColumn {
    fn from(c: ColumnSpec) -> RawColumn {
        let (kind, references) = match c.kind {
            ColumnKind::Numeric => ("numeric", None),
            ColumnKind::Categorical => ("categorical", None),
            ColumnKind::Key => ("key", None),
            ColumnKind::ForeignKey(t) => ("foreign_key", Some(t)),
        };
        RawColumn { name: c.name, kind: kind.to_string(), references }
    }
}

impl ColumnSpec {
    pub fn numeric(name: &str) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Numeric }
    }
    pub fn categorical(name: &str) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Categorical }
    }
    pub fn key(name: &str) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::Key }
    }
    pub fn foreign_key(name: &str, references: &str) -> Self {
        ColumnSpec { name: name.into(), kind: ColumnKind::ForeignKey(references.into()) }
    }
}

/// One table of a schema descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    /// CSV file name, relative to the data directory.
    pub file: String,
    pub columns: Vec<ColumnSpec>,
}

/// The JSON document describing a database: tables, their columns, and which
/// attribute is the class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub tables: Vec<TableSpec>,
    pub target_table: String,
    pub target_attribute: String,
}

impl SchemaDescriptor {
    pub fn from_json(json: &str) -> Result<Self, SchemaError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    /// Structural checks that need no row data.
    fn validate(&self) -> Result<(), SchemaError> {
        let bad = |msg: String| Err(SchemaError::Descriptor(msg));
        if self.tables.is_empty() {
            return bad("no tables".into());
        }
        let mut names = HashSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return bad(format!("duplicate table `{}`", t.name));
            }
            let mut cols = HashSet::new();
            let mut keys = 0;
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return bad(format!("duplicate column `{}.{}`", t.name, c.name));
                }
                if c.kind == ColumnKind::Key {
                    keys += 1;
                }
            }
            if keys > 1 {
                return bad(format!("table `{}` declares {keys} key columns", t.name));
            }
        }
        for t in &self.tables {
            for c in &t.columns {
                if let ColumnKind::ForeignKey(ref to) = c.kind {
                    if !names.contains(to.as_str()) {
                        return Err(SchemaError::UnknownTable(to.clone()));
                    }
                }
            }
        }
        let target = self
            .tables
            .iter()
            .find(|t| t.name == self.target_table)
            .ok_or_else(|| SchemaError::UnknownTable(self.target_table.clone()))?;
        let attr = target
            .columns
            .iter()
            .find(|c| c.name == self.target_attribute)
            .ok_or_else(|| SchemaError::TargetNotCategorical {
                table: self.target_table.clone(),
                attribute: self.target_attribute.clone(),
                reason: "no such column".into(),
            })?;
        if attr.kind != ColumnKind::Categorical {
            return Err(SchemaError::TargetNotCategorical {
                table: self.target_table.clone(),
                attribute: self.target_attribute.clone(),
                reason: format!("declared as {:?}", attr.kind),
            });
        }
        Ok(())
    }
}

/// A loaded table: its spec, raw string cells (empty string = null), and the
/// key/foreign-key indexes built during validation.
#[derive(Clone, Debug)]
pub struct Table {
    spec: TableSpec,
    rows: Vec<Vec<String>>,
    key_col: Option<usize>,
    key_index: HashMap<String, usize>,
    /// Column indices declared as foreign keys, in declaration order.
    fk_cols: Vec<usize>,
    /// Parallel to `fk_cols`: referenced-key value → child rows in file order.
    fk_index: Vec<HashMap<String, Vec<usize>>>,
}

impl Table {
    pub fn name(&self) -> &str {
        &self.spec.name
    }
    pub fn spec(&self) -> &TableSpec {
        &self.spec
    }
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
    pub fn n_columns(&self) -> usize {
        self.spec.columns.len()
    }
    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }
    /// Cell as an optional value: empty string means null.
    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        let v = self.rows[row][col].as_str();
        if v.is_empty() {
            None
        } else {
            Some(v)
        }
    }
    pub fn key_column(&self) -> Option<usize> {
        self.key_col
    }
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.spec.columns.iter().position(|c| c.name == name)
    }
    /// Row holding the given key value.
    pub fn row_of_key(&self, key: &str) -> Option<usize> {
        self.key_index.get(key).copied()
    }
}

/// A validated multi-relational database held in memory.
#[derive(Clone, Debug)]
pub struct RelationalDatabase {
    tables: Vec<Table>,
    by_name: HashMap<String, usize>,
    target_table: usize,
    target_col: usize,
}

/// Load a database from a schema descriptor file plus its CSV directory.
pub fn load_database(
    schema_path: &Path,
    data_dir: &Path,
) -> Result<RelationalDatabase, SchemaError> {
    RelationalDatabase::load(schema_path, data_dir)
}

impl RelationalDatabase {
    /// Read `schema_path`, then every table's CSV under `data_dir`, and
    /// validate the whole database (headers, types, keys, foreign keys,
    /// join-graph shape, target usability).
    pub fn load(schema_path: &Path, data_dir: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(schema_path)?;
        let descriptor = SchemaDescriptor::from_json(&text)?;
        descriptor.validate()?;

        let mut all_rows = Vec::with_capacity(descriptor.tables.len());
        for spec in &descriptor.tables {
            let path = data_dir.join(&spec.file);
            if !path.is_file() {
                return Err(SchemaError::MissingTableFile { table: spec.name.clone(), path });
            }
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .from_reader(File::open(&path)?);
            let expected: Vec<String> = spec.columns.iter().map(|c| c.name.clone()).collect();
            let found: Vec<String> =
                reader.headers()?.iter().map(|h| h.to_string()).collect();
            if found != expected {
                return Err(SchemaError::HeaderMismatch {
                    table: spec.name.clone(),
                    expected,
                    found,
                });
            }
            let mut rows = Vec::new();
            for (i, record) in reader.records().enumerate() {
                let record = record?;
                if record.len() != spec.columns.len() {
                    return Err(SchemaError::RaggedRow {
                        table: spec.name.clone(),
                        row: i,
                        expected: spec.columns.len(),
                        found: record.len(),
                    });
                }
                rows.push(record.iter().map(|f| f.to_string()).collect());
            }
            all_rows.push(rows);
        }
        Self::from_parts(descriptor, all_rows)
    }

    /// Build a database from an in-memory descriptor and per-table rows
    /// (same order as `descriptor.tables`). Runs the full validation.
    pub fn from_parts(
        descriptor: SchemaDescriptor,
        rows_per_table: Vec<Vec<Vec<String>>>,
    ) -> Result<Self, SchemaError> {
        descriptor.validate()?;
        assert_eq!(
            descriptor.tables.len(),
            rows_per_table.len(),
            "one row set per table"
        );

        let by_name: HashMap<String, usize> = descriptor
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();

        let mut tables = Vec::with_capacity(descriptor.tables.len());
        for (spec, rows) in descriptor.tables.iter().zip(rows_per_table) {
            tables.push(Self::index_table(spec.clone(), rows)?);
        }

        let target_table = by_name[&descriptor.target_table];
        let target_col = tables[target_table]
            .column_index(&descriptor.target_attribute)
            .expect("validated above");

        let mut db = RelationalDatabase { tables, by_name, target_table, target_col };
        db.check_foreign_keys()?;
        db.check_tree_shape()?;
        db.check_target()?;
        Ok(db)
    }

    /// Per-table validation: cell counts, numeric parses, key uniqueness;
    /// builds the key index.
    fn index_table(spec: TableSpec, rows: Vec<Vec<String>>) -> Result<Table, SchemaError> {
        let n_cols = spec.columns.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(SchemaError::RaggedRow {
                    table: spec.name.clone(),
                    row: i,
                    expected: n_cols,
                    found: row.len(),
                });
            }
        }
        let key_col = spec.columns.iter().position(|c| c.kind == ColumnKind::Key);
        let mut key_index = HashMap::new();
        if let Some(k) = key_col {
            for (i, row) in rows.iter().enumerate() {
                let v = row[k].as_str();
                if v.is_empty() {
                    return Err(SchemaError::NullKey { table: spec.name.clone(), row: i });
                }
                if key_index.insert(v.to_string(), i).is_some() {
                    return Err(SchemaError::DuplicateKey {
                        table: spec.name.clone(),
                        value: v.to_string(),
                    });
                }
            }
        }
        for (c, col) in spec.columns.iter().enumerate() {
            if col.kind != ColumnKind::Numeric {
                continue;
            }
            for (i, row) in rows.iter().enumerate() {
                let v = row[c].as_str();
                if !v.is_empty() && v.trim().parse::<f64>().is_err() {
                    return Err(SchemaError::InvalidNumeric {
                        table: spec.name.clone(),
                        column: col.name.clone(),
                        value: v.to_string(),
                        row: i,
                    });
                }
            }
        }
        let fk_cols: Vec<usize> = spec
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c.kind, ColumnKind::ForeignKey(_)))
            .map(|(i, _)| i)
            .collect();
        let fk_index = vec![HashMap::new(); fk_cols.len()];
        Ok(Table { spec, rows, key_col, key_index, fk_cols, fk_index })
    }

    /// Referential integrity; builds each table's foreign-key indexes.
    fn check_foreign_keys(&mut self) -> Result<(), SchemaError> {
        for t in 0..self.tables.len() {
            for fi in 0..self.tables[t].fk_cols.len() {
                let col = self.tables[t].fk_cols[fi];
                let referenced_name = match &self.tables[t].spec.columns[col].kind {
                    ColumnKind::ForeignKey(name) => name.clone(),
                    _ => unreachable!(),
                };
                let referenced = self.by_name[&referenced_name];
                if self.tables[referenced].key_col.is_none() {
                    return Err(SchemaError::MissingKeyColumn {
                        table: self.tables[t].name().to_string(),
                        column: self.tables[t].spec.columns[col].name.clone(),
                        referenced: referenced_name,
                    });
                }
                let mut index: HashMap<String, Vec<usize>> = HashMap::new();
                for i in 0..self.tables[t].rows.len() {
                    let v = self.tables[t].rows[i][col].clone();
                    if v.is_empty() {
                        continue; // null foreign key: row joins to nothing
                    }
                    if !self.tables[referenced].key_index.contains_key(&v) {
                        return Err(SchemaError::DanglingForeignKey {
                            table: self.tables[t].name().to_string(),
                            column: self.tables[t].spec.columns[col].name.clone(),
                            value: v,
                            referenced: referenced_name,
                        });
                    }
                    index.entry(v).or_default().push(i);
                }
                self.tables[t].fk_index[fi] = index;
            }
        }
        Ok(())
    }

    /// The undirected foreign-key graph restricted to tables reachable from
    /// the target must be a tree. Parallel foreign keys between the same two
    /// tables and self-references count as cycles.
    fn check_tree_shape(&self) -> Result<(), SchemaError> {
        // edge list: one undirected edge per foreign-key column
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.tables.len()];
        let mut edge_id = 0usize;
        for (t, table) in self.tables.iter().enumerate() {
            for &col in &table.fk_cols {
                let other = match &table.spec.columns[col].kind {
                    ColumnKind::ForeignKey(name) => self.by_name[name],
                    _ => unreachable!(),
                };
                if other == t {
                    return Err(SchemaError::CyclicJoinGraph { table: table.name().to_string() });
                }
                adjacency[t].push((edge_id, other));
                adjacency[other].push((edge_id, t));
                edge_id += 1;
            }
        }
        let mut visited = vec![false; self.tables.len()];
        let mut stack = vec![(self.target_table, usize::MAX)];
        visited[self.target_table] = true;
        while let Some((node, via_edge)) = stack.pop() {
            for &(edge, other) in &adjacency[node] {
                if edge == via_edge {
                    continue;
                }
                if visited[other] {
                    return Err(SchemaError::CyclicJoinGraph {
                        table: self.tables[other].name().to_string(),
                    });
                }
                visited[other] = true;
                stack.push((other, edge));
            }
        }
        Ok(())
    }

    /// Labels must be non-null everywhere and take at least two distinct
    /// values whenever the target table has rows.
    fn check_target(&self) -> Result<(), SchemaError> {
        let table = &self.tables[self.target_table];
        let mut distinct = HashSet::new();
        for (i, row) in table.rows.iter().enumerate() {
            let v = row[self.target_col].as_str();
            if v.is_empty() {
                return Err(SchemaError::TargetNotCategorical {
                    table: table.name().to_string(),
                    attribute: table.spec.columns[self.target_col].name.clone(),
                    reason: format!("row {i} has a null label"),
                });
            }
            distinct.insert(v);
        }
        if !table.rows.is_empty() && distinct.len() < 2 {
            return Err(SchemaError::TargetNotCategorical {
                table: table.name().to_string(),
                attribute: table.spec.columns[self.target_col].name.clone(),
                reason: format!(
                    "only one distinct value `{}`",
                    distinct.iter().next().unwrap()
                ),
            });
        }
        Ok(())
    }

    pub fn descriptor(&self) -> SchemaDescriptor {
        SchemaDescriptor {
            tables: self.tables.iter().map(|t| t.spec.clone()).collect(),
            target_table: self.tables[self.target_table].name().to_string(),
            target_attribute: self.tables[self.target_table].spec.columns[self.target_col]
                .name
                .clone(),
        }
    }

    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn table(&self, idx: usize) -> &Table {
        &self.tables[idx]
    }

    pub fn table_index(&self, name: &str) -> Result<usize, SchemaError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| SchemaError::UnknownTable(name.to_string()))
    }

    pub fn target_table_index(&self) -> usize {
        self.target_table
    }

    pub fn target_table_name(&self) -> &str {
        self.tables[self.target_table].name()
    }

    pub fn target_attribute(&self) -> &str {
        &self.tables[self.target_table].spec.columns[self.target_col].name
    }

    pub fn target_column_index(&self) -> usize {
        self.target_col
    }

    /// Tables adjacent to `table` in the join graph (either side of a foreign
    /// key), in descriptor declaration order.
    pub fn join_children(&self, table: &str) -> Result<Vec<&str>, SchemaError> {
        let t = self.table_index(table)?;
        Ok((0..self.tables.len())
            .filter(|&c| c != t && self.adjacent(t, c))
            .map(|c| self.tables[c].name())
            .collect())
    }

    pub(crate) fn adjacent(&self, a: usize, b: usize) -> bool {
        let fk_into = |from: usize, to: usize| {
            self.tables[from].fk_cols.iter().any(|&col| {
                matches!(&self.tables[from].spec.columns[col].kind,
                         ColumnKind::ForeignKey(name) if self.by_name[name] == to)
            })
        };
        fk_into(a, b) || fk_into(b, a)
    }

    /// Count of instances per class label, over the whole target table.
    pub fn class_distribution(&self) -> BTreeMap<String, usize> {
        let table = &self.tables[self.target_table];
        let mut counts = BTreeMap::new();
        for row in &table.rows {
            *counts.entry(row[self.target_col].clone()).or_insert(0usize) += 1;
        }
        counts
    }

    /// Instance keys in target-table row order: the key column's values, or
    /// row ordinals when the target table declares no key.
    pub fn instance_keys(&self) -> Vec<String> {
        let table = &self.tables[self.target_table];
        match table.key_col {
            Some(k) => table.rows.iter().map(|r| r[k].clone()).collect(),
            None => (0..table.rows.len()).map(|i| i.to_string()).collect(),
        }
    }

    /// Target-table row for an instance key (see [`Self::instance_keys`]).
    pub fn instance_row(&self, key: &str) -> Option<usize> {
        let table = &self.tables[self.target_table];
        match table.key_col {
            Some(_) => table.row_of_key(key),
            None => key.parse::<usize>().ok().filter(|&i| i < table.rows.len()),
        }
    }

    /// Class label of a target-table row.
    pub fn target_label(&self, row: usize) -> &str {
        &self.tables[self.target_table].rows[row][self.target_col]
    }

    /// Rows of `to` joined with row `from_row` of `from`, for adjacent
    /// tables. Child direction (a foreign key of `to` references `from`)
    /// yields many rows in file order; parent direction yields zero or one.
    pub fn connected_rows(&self, from: usize, from_row: usize, to: usize) -> Vec<usize> {
        let mut out = Vec::new();
        // child direction: `to` has foreign keys into `from`
        if let Some(from_key_col) = self.tables[from].key_col {
            let key = &self.tables[from].rows[from_row][from_key_col];
            if !key.is_empty() {
                let to_table = &self.tables[to];
                for (fi, &col) in to_table.fk_cols.iter().enumerate() {
                    let references = match &to_table.spec.columns[col].kind {
                        ColumnKind::ForeignKey(name) => self.by_name[name],
                        _ => unreachable!(),
                    };
                    if references == from {
                        if let Some(rows) = to_table.fk_index[fi].get(key) {
                            out.extend_from_slice(rows);
                        }
                    }
                }
            }
        }
        // parent direction: `from` has a foreign key into `to`
        let from_table = &self.tables[from];
        for &col in &from_table.fk_cols {
            let references = match &from_table.spec.columns[col].kind {
                ColumnKind::ForeignKey(name) => self.by_name[name],
                _ => unreachable!(),
            };
            if references == to {
                let v = from_table.rows[from_row][col].as_str();
                if !v.is_empty() {
                    if let Some(&r) = self.tables[to].key_index.get(v) {
                        out.push(r);
                    }
                }
            }
        }
        out
    }
}
