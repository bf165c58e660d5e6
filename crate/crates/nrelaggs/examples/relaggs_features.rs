//! Static propositionalization: turn a relational database into one flat CSV
//! of average/max/min/stddev/sum summaries, ready for any tabular learner.
//!
//! ```sh
//! cargo run --example relaggs_features [-- path/to/schema.json out.csv]
//! ```

use std::path::{Path, PathBuf};

use nrelaggs::commands::{cmd_propositionalize, PropositionalizeArgs};

fn main() -> Result<(), nrelaggs::CliError> {
    let mut args = std::env::args().skip(1);
    let schema = args.next().map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/trains/schema.json")
    });
    let output = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("relaggs_features.csv"));

    let (n, d) = cmd_propositionalize(&PropositionalizeArgs {
        schema: &schema,
        data_dir: None,
        output: &output,
    })?;
    println!("wrote {n} instances x {d} features to {}", output.display());

    let text = std::fs::read_to_string(&output)?;
    for line in text.lines().take(3) {
        let short: String = line.chars().take(76).collect();
        println!("  {short}...");
    }
    Ok(())
}
