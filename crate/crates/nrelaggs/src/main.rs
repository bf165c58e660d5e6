//! Thin command-line front end; all behavior lives in [`nrelaggs::commands`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nrelaggs::commands::{
    cmd_evaluate, cmd_extract_features, cmd_ingest, cmd_propositionalize, cmd_train, EvaluateArgs,
    ExtractFeaturesArgs, IngestArgs, PropositionalizeArgs, TrainArgs,
};
use nrelaggs::eval::{Engine, Protocol};
use nrelaggs::model::{FeatureLayer, ModelConfig};
use nrelaggs::CliError;

/// Propositionalize relational databases with static or trainable aggregation.
#[derive(Parser)]
#[command(version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Arguments every subcommand shares: where the database lives.
#[derive(Args)]
struct DbArgs {
    /// JSON schema descriptor of the database.
    #[arg(long)]
    schema: PathBuf,
    /// Directory holding the table CSV files (default: next to the schema).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a database; print tables, classes, and the plan.
    Ingest {
        #[command(flatten)]
        db: DbArgs,
        /// Also write the collated instance bundles to this file.
        #[arg(long)]
        dump_bundles: Option<PathBuf>,
    },
    /// Static aggregation: write one fixed-length feature row per instance.
    Propositionalize {
        #[command(flatten)]
        db: DbArgs,
        /// Output CSV path.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Fit a trainable-aggregation model on the whole database.
    Train {
        #[command(flatten)]
        db: DbArgs,
        /// Model family: nrelaggs or fix-nrelaggs.
        #[arg(long, default_value = "nrelaggs")]
        engine: Engine,
        #[command(flatten)]
        model: ModelFlags,
        /// Seed for parameter initialization.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint path to write.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Repeated stratified nested cross-validation of one engine.
    Evaluate {
        #[command(flatten)]
        db: DbArgs,
        /// majority, relaggs, nrelaggs, or fix-nrelaggs.
        #[arg(long, default_value = "nrelaggs")]
        engine: Engine,
        #[arg(long, default_value_t = 2)]
        repeats: usize,
        /// Outer folds (reduced automatically if a class is smaller).
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// Inner folds used to pick hyperparameters.
        #[arg(long, default_value_t = 3)]
        inner_folds: usize,
        /// Root seed; all splits and initializations derive from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        /// Directory for report.json, summary.csv, and manifest.json.
        #[arg(long, short)]
        output_dir: PathBuf,
    },
    /// Write a trained model's learned feature vectors for every instance.
    ExtractFeatures {
        #[command(flatten)]
        db: DbArgs,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// pre_predictor, or hidden<i> for the i-th hidden activation.
        #[arg(long, default_value = "pre_predictor")]
        layer: FeatureLayer,
        /// Output CSV path.
        #[arg(long, short)]
        output: PathBuf,
    },
}

/// Training hyperparameters, shared verbatim with the checkpoint.
#[derive(Args)]
struct ModelFlags {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Stop after this many epochs without improvement.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Width factor of the per-table feature-generation map.
    #[arg(long, default_value_t = 1.0)]
    generation_factor: f64,
    /// Width factor of the per-table feature-selection map.
    #[arg(long, default_value_t = 1.0)]
    selection_factor: f64,
    /// Hidden layer widths of the predictor, e.g. `100,50`.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    predictor: Vec<usize>,
    /// Keep the aggregation layers pinned to static aggregation.
    #[arg(long)]
    freeze_identity: bool,
}

impl ModelFlags {
    fn to_config(&self) -> ModelConfig {
        let mut config = ModelConfig {
            epochs: self.epochs,
            patience: self.patience,
            feature_generation_factor: self.generation_factor,
            feature_selection_factor: self.selection_factor,
            predictor_layers: self.predictor.clone(),
            freeze_identity: self.freeze_identity,
            ..ModelConfig::default()
        };
        config.optimizer.learning_rate = self.learning_rate;
        config
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { db, dump_bundles } => {
            let summary = cmd_ingest(&IngestArgs {
                schema: &db.schema,
                data_dir: db.data_dir.as_deref(),
                dump_bundles: dump_bundles.as_deref(),
            })?;
            println!("{summary}");
        }
        Command::Propositionalize { db, output } => {
            let (n, d) = cmd_propositionalize(&PropositionalizeArgs {
                schema: &db.schema,
                data_dir: db.data_dir.as_deref(),
                output: &output,
            })?;
            println!("wrote {n} instances x {d} features to {}", output.display());
        }
        Command::Train { db, engine, model, seed, output } => {
            let outcome = cmd_train(&TrainArgs {
                schema: &db.schema,
                data_dir: db.data_dir.as_deref(),
                engine,
                config: model.to_config(),
                seed,
                output: &output,
            })?;
            println!(
                "trained on {} instances ({} parameters): best loss {:.6} at epoch {} of {}",
                outcome.n_instances,
                outcome.n_params,
                outcome.report.best_loss,
                outcome.report.best_epoch,
                outcome.report.epochs_run,
            );
            println!("checkpoint written to {}", output.display());
        }
        Command::Evaluate {
            db,
            engine,
            repeats,
            folds,
            inner_folds,
            seed,
            epochs,
            patience,
            output_dir,
        } => {
            let base = ModelConfig { epochs, patience, ..ModelConfig::default() };
            let report = cmd_evaluate(&EvaluateArgs {
                schema: &db.schema,
                data_dir: db.data_dir.as_deref(),
                engine,
                protocol: Protocol { repeats, folds, inner_folds, seed },
                base,
                output_dir: &output_dir,
            })?;
            println!(
                "{}: accuracy {:.4} +- {:.4}, AUROC {:.4} +- {:.4} over {} folds",
                report.engine,
                report.accuracy_mean,
                report.accuracy_std,
                report.auroc_mean,
                report.auroc_std,
                report.fold_results.len(),
            );
            println!("report written to {}", output_dir.join("report.json").display());
        }
        Command::ExtractFeatures { db, checkpoint, layer, output } => {
            let (n, d) = cmd_extract_features(&ExtractFeaturesArgs {
                schema: &db.schema,
                data_dir: db.data_dir.as_deref(),
                checkpoint: &checkpoint,
                layer,
                output: &output,
            })?;
            println!("wrote {n} instances x {d} features to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
