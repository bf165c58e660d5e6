//! Aggregation plans: which tables feed which, and in what order.
//!
//! A plan is derived from the join tree by breadth-first search from the
//! target table. Each step pairs a `current` table with the `nexts` that hang
//! off it one hop further from the target. Executing the steps leaves-first
//! (the order stored here) folds information inward until everything has been
//! aggregated into the target; the reversed order walks outward from an
//! instance and is what bundle construction uses.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SchemaError;
use crate::schema::RelationalDatabase;

/// One aggregation step: fold each table in `nexts` into `current`.
/// Values are plan-local table indices (see [`AggregationPlan::table_order`]).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub nexts: Vec<usize>,
    pub current: usize,
}

/// The full plan for a database: table ordering plus execution steps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationPlan {
    /// Steps in execution (leaves-first) order; the last step folds into the
    /// target table. Empty for a single-table database.
    steps: Vec<PlanStep>,
    /// Plan-local index → table name; index 0 is always the target table.
    table_order: Vec<String>,
    /// Plan-local index → index in the database's table list.
    db_indices: Vec<usize>,
}

impl AggregationPlan {
    /// The plan of a database that is just its target table: no steps. Also
    /// used to train a plain scorer on an externally built feature matrix.
    pub fn single_table(name: &str) -> AggregationPlan {
        AggregationPlan {
            steps: Vec::new(),
            table_order: vec![name.to_string()],
            db_indices: vec![0],
        }
    }

    /// Steps leaves-first: every table is folded before the table it feeds.
    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    /// Steps root-first, for walking outward from target rows.
    pub fn traversal_steps(&self) -> impl DoubleEndedIterator<Item = &PlanStep> {
        self.steps.iter().rev()
    }

    /// Table names in plan-local order (target first).
    pub fn table_order(&self) -> &[String] {
        &self.table_order
    }

    pub fn n_tables(&self) -> usize {
        self.table_order.len()
    }

    /// Database table index for a plan-local index.
    pub fn db_index(&self, plan_idx: usize) -> usize {
        self.db_indices[plan_idx]
    }

    /// Plan-parent of every table: `parent[t]` is the table that `t`'s rows
    /// aggregate into; `None` for the target table.
    pub fn parent_map(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.n_tables()];
        for step in &self.steps {
            for &n in &step.nexts {
                parent[n] = Some(step.current);
            }
        }
        parent
    }

    /// The same plan with step order reversed. An involution:
    /// `p.inverted().inverted() == p`.
    pub fn inverted(&self) -> AggregationPlan {
        AggregationPlan {
            steps: self.steps.iter().rev().cloned().collect(),
            table_order: self.table_order.clone(),
            db_indices: self.db_indices.clone(),
        }
    }

    /// Steps as `(next names, current name)` pairs, for display and tests.
    pub fn step_names(&self) -> Vec<(Vec<&str>, &str)> {
        self.steps
            .iter()
            .map(|s| {
                (
                    s.nexts.iter().map(|&n| self.table_order[n].as_str()).collect(),
                    self.table_order[s.current].as_str(),
                )
            })
            .collect()
    }

    /// Hex SHA-256 over the canonical serialized plan. Stored in checkpoints
    /// so a model is never applied under a different plan.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::fmt::Display for AggregationPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (nexts, current)) in self.step_names().iter().enumerate() {
            writeln!(f, "  step {i}: [{}] -> {current}", nexts.join(", "))?;
        }
        Ok(())
    }
}

/// Derive the aggregation plan for a database's join tree.
///
/// Breadth-first from the target table; each visited table contributes a step
/// whose `nexts` are its not-yet-visited neighbors in descriptor declaration
/// order. The recorded list is then reversed so that execution runs
/// leaves-first, with sibling subtrees in declaration order.
pub fn generate_aggregation_plan(
    db: &RelationalDatabase,
) -> Result<AggregationPlan, SchemaError> {
    let target = db.target_table_index();
    let n = db.n_tables();

    let mut plan_index = vec![usize::MAX; n]; // db index -> plan-local index
    let mut table_order = vec![db.table(target).name().to_string()];
    let mut db_indices = vec![target];
    plan_index[target] = 0;

    let mut steps = Vec::new();
    let mut queue = std::collections::VecDeque::from([target]);
    while let Some(current) = queue.pop_front() {
        let mut nexts = Vec::new();
        for candidate in 0..n {
            if candidate != current
                && plan_index[candidate] == usize::MAX
                && db.adjacent(current, candidate)
            {
                plan_index[candidate] = table_order.len();
                table_order.push(db.table(candidate).name().to_string());
                db_indices.push(candidate);
                nexts.push(candidate);
            }
        }
        if nexts.is_empty() {
            continue;
        }
        // enqueue deepest-declared-last so that reversing the step list
        // restores declaration order among same-depth siblings
        for &next in nexts.iter().rev() {
            queue.push_back(next);
        }
        steps.push(PlanStep {
            nexts: nexts.iter().map(|&c| plan_index[c]).collect(),
            current: plan_index[current],
        });
    }
    steps.reverse();

    Ok(AggregationPlan { steps, table_order, db_indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::movielens_schema;
    use crate::schema::{ColumnSpec, RelationalDatabase, SchemaDescriptor, TableSpec};

    fn trains_db() -> RelationalDatabase {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/trains");
        RelationalDatabase::load(&dir.join("schema.json"), &dir).unwrap()
    }

    #[test]
    fn movielens_plan_matches_published_order() {
        let plan = generate_aggregation_plan(&movielens_schema()).unwrap();
        let expected = vec![
            (vec!["actors"], "movies2actors"),
            (vec!["directors"], "movies2directors"),
            (vec!["movies2actors", "movies2directors"], "movies"),
            (vec!["movies"], "u2base"),
            (vec!["u2base"], "users"),
        ];
        assert_eq!(plan.step_names(), expected);
        assert_eq!(plan.table_order()[0], "users");
    }

    #[test]
    fn trains_plan_is_single_step() {
        let plan = generate_aggregation_plan(&trains_db()).unwrap();
        assert_eq!(plan.step_names(), vec![(vec!["cars"], "trains")]);
        assert_eq!(plan.table_order(), &["trains".to_string(), "cars".to_string()]);
    }

    #[test]
    fn single_table_plan_is_empty() {
        let desc = SchemaDescriptor {
            tables: vec![TableSpec {
                name: "only".into(),
                file: "only.csv".into(),
                columns: vec![ColumnSpec::key("id"), ColumnSpec::categorical("y")],
            }],
            target_table: "only".into(),
            target_attribute: "y".into(),
        };
        let db = RelationalDatabase::from_parts(
            desc,
            vec![vec![
                vec!["a".into(), "p".into()],
                vec!["b".into(), "q".into()],
            ]],
        )
        .unwrap();
        let plan = generate_aggregation_plan(&db).unwrap();
        assert!(plan.steps().is_empty());
        assert_eq!(plan.table_order(), &["only".to_string()]);
    }

    #[test]
    fn inversion_is_an_involution_and_reverses_steps() {
        let plan = generate_aggregation_plan(&movielens_schema()).unwrap();
        let inv = plan.inverted();
        assert_eq!(inv.steps().first(), plan.steps().last());
        assert_eq!(inv.inverted(), plan);
        let forward: Vec<_> = plan.traversal_steps().collect();
        assert_eq!(forward.first().copied(), plan.steps().last());
    }

    #[test]
    fn fingerprint_distinguishes_plans() {
        let a = generate_aggregation_plan(&movielens_schema()).unwrap();
        let b = generate_aggregation_plan(&trains_db()).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn every_table_is_folded_exactly_once() {
        let plan = generate_aggregation_plan(&movielens_schema()).unwrap();
        let mut folded = std::collections::HashSet::new();
        for step in plan.steps() {
            for &n in &step.nexts {
                assert!(folded.insert(n), "table folded twice");
            }
        }
        // every non-target table appears as a next exactly once
        assert_eq!(folded.len(), plan.n_tables() - 1);
        assert!(!folded.contains(&0));
    }
}
