//! Derive the aggregation plan for a snowflake schema and show both orders it
//! is used in: execution order (leaves first, so every table is summarized
//! before its parent needs it) and traversal order (root first, as the
//! breadth-first walk discovered the tables).

use nrelaggs::datagen::movielens_schema;
use nrelaggs::plan::generate_aggregation_plan;

fn main() -> Result<(), nrelaggs::CliError> {
    // A three-level snowflake: users feed movies, movies feed ratings...
    let db = movielens_schema();
    let plan = generate_aggregation_plan(&db)?;

    println!("tables, root first: {}", plan.table_order().join(", "));
    println!("fingerprint: {}", plan.fingerprint());

    println!("\nexecution order (each step folds children into its table):");
    for (i, (children, table)) in plan.step_names().iter().enumerate() {
        println!("  step {i}: fold [{}] into {table}", children.join(", "));
    }

    println!("\ntraversal order (outward from the target):");
    for step in plan.traversal_steps() {
        let (children, table) = (&step.nexts, step.current);
        let names: Vec<&str> = children
            .iter()
            .map(|&c| plan.table_order()[c].as_str())
            .collect();
        println!("  from {} reach [{}]", plan.table_order()[table], names.join(", "));
    }
    Ok(())
}
