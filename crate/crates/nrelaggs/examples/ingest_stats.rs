//! Load and validate a relational database, then print its shape: per-table
//! row counts, encoded widths, the class distribution, the derived
//! aggregation plan, and the majority-class accuracy floor.
//!
//! ```sh
//! cargo run --example ingest_stats [-- path/to/schema.json]
//! ```

use std::path::{Path, PathBuf};

use nrelaggs::commands::{cmd_ingest, IngestArgs};

fn main() -> Result<(), nrelaggs::CliError> {
    let schema = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/trains/schema.json")
    });
    let summary = cmd_ingest(&IngestArgs { schema: &schema, data_dir: None, dump_bundles: None })?;
    println!("{summary}");
    Ok(())
}
