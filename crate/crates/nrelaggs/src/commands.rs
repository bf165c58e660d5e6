//! The five pipeline commands as plain library functions. The binary is a
//! thin argument parser over these; tests and examples call them directly.

use std::path::{Path, PathBuf};

use crate::bundle::{build_instance, collate, write_bundle_file, BatchBundle, InstanceBundle};
use crate::error::CliError;
use crate::eval::{majority_accuracy, run_benchmark, Engine, EvalReport, Protocol};
use crate::manifest::RunManifest;
use crate::model::{
    build_model, load_checkpoint, make_batches, save_checkpoint, train, Checkpoint, FeatureLayer,
    ModelConfig, NRelaggsModel, TrainReport,
};
use crate::plan::{generate_aggregation_plan, AggregationPlan};
use crate::preprocess::{fit_preprocessor, LabelMap, PreprocessorState};
use crate::relaggs::{augmented_widths, relaggs_matrix};
use crate::schema::RelationalDatabase;

/// Load a database; table files are looked up next to the schema descriptor
/// unless a directory is given.
pub fn load_db(schema: &Path, data_dir: Option<&Path>) -> Result<RelationalDatabase, CliError> {
    let default_dir = schema.parent().unwrap_or(Path::new("."));
    Ok(RelationalDatabase::load(schema, data_dir.unwrap_or(default_dir))?)
}

/// Everything the pipeline derives from a database when fitting on all of it.
struct FittedPipeline {
    state: PreprocessorState,
    plan: AggregationPlan,
    labels: LabelMap,
    bundles: Vec<InstanceBundle>,
}

fn fit_on_everything(db: &RelationalDatabase) -> Result<FittedPipeline, CliError> {
    let keys = db.instance_keys();
    let state = fit_preprocessor(db, &keys)?;
    let plan = generate_aggregation_plan(db)?;
    let labels = LabelMap::from_database(db)?;
    let bundles = keys
        .iter()
        .map(|k| build_instance(db, &state, &plan, &labels, k))
        .collect::<Result<_, _>>()?;
    Ok(FittedPipeline { state, plan, labels, bundles })
}

fn encoded_widths(state: &PreprocessorState, plan: &AggregationPlan) -> Vec<usize> {
    (0..plan.n_tables()).map(|t| state.width_by_index(plan.db_index(t))).collect()
}

fn manifest_path(output: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", output.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

// ---------------------------------------------------------------- ingest --

#[derive(Clone, Debug)]
pub struct TableStat {
    pub name: String,
    pub rows: usize,
    pub columns: usize,
    pub encoded_width: usize,
}

/// What `ingest` reports about a database.
#[derive(Clone, Debug)]
pub struct IngestSummary {
    pub tables: Vec<TableStat>,
    pub target_table: String,
    pub target_attribute: String,
    pub class_counts: Vec<(String, usize)>,
    pub majority_accuracy: f64,
    pub plan_steps: Vec<String>,
    pub plan_fingerprint: String,
    /// Width of the static propositionalization of the target table.
    pub static_width: usize,
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "tables:")?;
        for t in &self.tables {
            writeln!(
                f,
                "  {:<20} {:>6} rows  {:>3} columns  encodes to width {}",
                t.name, t.rows, t.columns, t.encoded_width
            )?;
        }
        writeln!(f, "target: {}.{}", self.target_table, self.target_attribute)?;
        write!(f, "classes:")?;
        for (label, count) in &self.class_counts {
            write!(f, " {label}={count}")?;
        }
        writeln!(f)?;
        writeln!(f, "majority accuracy: {:.4}", self.majority_accuracy)?;
        writeln!(f, "aggregation plan ({}):", &self.plan_fingerprint[..12])?;
        for (i, s) in self.plan_steps.iter().enumerate() {
            writeln!(f, "  step {i}: {s}")?;
        }
        write!(f, "static feature width: {}", self.static_width)
    }
}

pub struct IngestArgs<'a> {
    pub schema: &'a Path,
    pub data_dir: Option<&'a Path>,
    /// Write the collated instance bundles of the whole database here.
    pub dump_bundles: Option<&'a Path>,
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<IngestSummary, CliError> {
    let db = load_db(args.schema, args.data_dir)?;
    let fitted = fit_on_everything(&db)?;
    let widths = encoded_widths(&fitted.state, &fitted.plan);

    let tables = fitted
        .plan
        .table_order()
        .iter()
        .enumerate()
        .map(|(t, name)| {
            let table = db.table(fitted.plan.db_index(t));
            TableStat {
                name: name.clone(),
                rows: table.rows().len(),
                columns: table.spec().columns.len(),
                encoded_width: widths[t],
            }
        })
        .collect();

    let class_counts: Vec<(String, usize)> = db.class_distribution().into_iter().collect();
    let instance_labels: Vec<String> = db
        .instance_keys()
        .iter()
        .map(|k| db.target_label(db.instance_row(k).expect("key from table")).to_string())
        .collect();
    let descriptor = db.descriptor();

    if let Some(path) = args.dump_bundles {
        let batch = collate(&fitted.bundles)?;
        write_bundle_file(path, &batch, &fitted.plan.fingerprint())?;
    }

    Ok(IngestSummary {
        tables,
        target_table: descriptor.target_table.clone(),
        target_attribute: descriptor.target_attribute.clone(),
        class_counts,
        majority_accuracy: majority_accuracy(&instance_labels),
        plan_steps: fitted
            .plan
            .step_names()
            .iter()
            .map(|(nexts, current)| format!("[{}] -> {current}", nexts.join(", ")))
            .collect(),
        plan_fingerprint: fitted.plan.fingerprint(),
        static_width: augmented_widths(&widths, &fitted.plan)[0],
    })
}

// ------------------------------------------------------ propositionalize --

pub struct PropositionalizeArgs<'a> {
    pub schema: &'a Path,
    pub data_dir: Option<&'a Path>,
    pub output: &'a Path,
}

/// Static aggregation of the whole database to a flat CSV
/// (`f0..f{D-1},target`, one row per target-table instance). Returns
/// `(instances, width)`.
pub fn cmd_propositionalize(args: &PropositionalizeArgs) -> Result<(usize, usize), CliError> {
    let db = load_db(args.schema, args.data_dir)?;
    let fitted = fit_on_everything(&db)?;
    let batch = collate(&fitted.bundles)?;
    let features = relaggs_matrix(&batch, &fitted.plan)?;

    let mut w = csv::Writer::from_path(args.output).map_err(std::io::Error::other)?;
    let mut header: Vec<String> = (0..features.ncols()).map(|j| format!("f{j}")).collect();
    header.push("target".into());
    w.write_record(&header).map_err(std::io::Error::other)?;
    for (i, bundle) in fitted.bundles.iter().enumerate() {
        let mut record: Vec<String> =
            features.row(i).iter().map(|v| format!("{v}")).collect();
        record.push(bundle.label.clone());
        w.write_record(&record).map_err(std::io::Error::other)?;
    }
    w.flush()?;

    let mut manifest = RunManifest::new("propositionalize", args.schema);
    manifest.plan_fingerprint = Some(fitted.plan.fingerprint());
    manifest.outputs = vec![file_name(args.output)];
    manifest.settings = serde_json::json!({
        "instances": batch.n_instances,
        "feature_width": features.ncols(),
    });
    manifest.write(&manifest_path(args.output))?;
    Ok((batch.n_instances, features.ncols()))
}

// ----------------------------------------------------------------- train --

pub struct TrainArgs<'a> {
    pub schema: &'a Path,
    pub data_dir: Option<&'a Path>,
    /// `nrelaggs` or `fix-nrelaggs`; the other engines have nothing to train
    /// ahead of time.
    pub engine: Engine,
    pub config: ModelConfig,
    pub seed: u64,
    pub output: &'a Path,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub n_instances: usize,
    pub n_params: usize,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let mut config = args.config.clone();
    match args.engine {
        Engine::NRelaggs => {}
        Engine::FixNRelaggs => {
            config.feature_generation_factor = 1.0;
            config.feature_selection_factor = 1.0;
        }
        other => {
            return Err(CliError::UnsupportedEngine {
                engine: other.name().into(),
                command: "train".into(),
                reason: "only the trainable-aggregation engines produce a checkpoint".into(),
            });
        }
    }

    let db = load_db(args.schema, args.data_dir)?;
    let fitted = fit_on_everything(&db)?;
    let widths = encoded_widths(&fitted.state, &fitted.plan);
    let mut model: NRelaggsModel<f32> = build_model(&widths, &fitted.plan, &config, args.seed)?;
    let n_params = model.n_params();
    let batches = make_batches(&fitted.bundles, &config)?;
    let report = train(&mut model, &batches, None)?;

    let checkpoint = Checkpoint::from_model(&model, &fitted.state, &fitted.labels);
    save_checkpoint(args.output, &checkpoint)?;

    let mut manifest = RunManifest::new("train", args.schema);
    manifest.plan_fingerprint = Some(fitted.plan.fingerprint());
    manifest.outputs = vec![file_name(args.output)];
    manifest.settings = serde_json::json!({
        "engine": args.engine.name(),
        "seed": args.seed,
        "config": config,
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
    });
    manifest.write(&manifest_path(args.output))?;

    Ok(TrainOutcome { report, n_instances: fitted.bundles.len(), n_params })
}

// -------------------------------------------------------------- evaluate --

pub struct EvaluateArgs<'a> {
    pub schema: &'a Path,
    pub data_dir: Option<&'a Path>,
    pub engine: Engine,
    pub protocol: Protocol,
    pub base: ModelConfig,
    /// Directory for `report.json`, `summary.csv`, and `manifest.json`.
    pub output_dir: &'a Path,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport, CliError> {
    let db = load_db(args.schema, args.data_dir)?;
    let report = run_benchmark(&db, args.engine, &args.base, &args.protocol)?;

    std::fs::create_dir_all(args.output_dir)?;
    let report_path = args.output_dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    std::fs::write(&report_path, json)?;

    let summary_path = args.output_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(std::io::Error::other)?;
    w.write_record(["repeat", "fold", "n_train", "n_test", "accuracy", "auroc", "chosen"])
        .map_err(std::io::Error::other)?;
    for r in &report.fold_results {
        w.write_record([
            r.repeat.to_string(),
            r.fold.to_string(),
            r.n_train.to_string(),
            r.n_test.to_string(),
            format!("{}", r.accuracy),
            format!("{}", r.auroc),
            r.chosen.clone(),
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()?;

    let mut manifest = RunManifest::new("evaluate", args.schema);
    manifest.plan_fingerprint = Some(generate_aggregation_plan(&db)?.fingerprint());
    manifest.outputs = vec!["report.json".into(), "summary.csv".into()];
    manifest.settings = serde_json::json!({
        "engine": args.engine.name(),
        "protocol": args.protocol,
        "epochs": args.base.epochs,
        "patience": args.base.patience,
    });
    manifest.write(&args.output_dir.join("manifest.json"))?;
    Ok(report)
}

// ------------------------------------------------------ extract-features --

pub struct ExtractFeaturesArgs<'a> {
    pub schema: &'a Path,
    pub data_dir: Option<&'a Path>,
    pub checkpoint: &'a Path,
    pub layer: FeatureLayer,
    pub output: &'a Path,
}

/// Write the checkpoint model's learned feature vectors for every instance
/// (`e0..e{d-1},target` with -1/+1 targets). Returns `(instances, width)`.
pub fn cmd_extract_features(args: &ExtractFeaturesArgs) -> Result<(usize, usize), CliError> {
    let db = load_db(args.schema, args.data_dir)?;
    let checkpoint = load_checkpoint(args.checkpoint)?;
    let plan = generate_aggregation_plan(&db)?;
    if plan.fingerprint() != checkpoint.plan_fingerprint {
        return Err(crate::error::ModelError::BadCheckpoint(format!(
            "checkpoint was trained under a different aggregation plan \
             (stored {}, this database yields {})",
            &checkpoint.plan_fingerprint[..12],
            &plan.fingerprint()[..12]
        ))
        .into());
    }
    let model = checkpoint.restore_model()?;
    let bundles: Vec<InstanceBundle> = db
        .instance_keys()
        .iter()
        .map(|k| build_instance(&db, &checkpoint.preprocessor, &plan, &checkpoint.labels, k))
        .collect::<Result<_, _>>()?;
    let batch: BatchBundle = collate(&bundles)?;
    let features = model.extract_features(&batch, args.layer)?;

    let mut w = csv::Writer::from_path(args.output).map_err(std::io::Error::other)?;
    let mut header: Vec<String> = (0..features.ncols()).map(|j| format!("e{j}")).collect();
    header.push("target".into());
    w.write_record(&header).map_err(std::io::Error::other)?;
    for i in 0..batch.n_instances {
        let mut record: Vec<String> =
            features.row(i).iter().map(|v| format!("{v}")).collect();
        record.push(format!("{}", batch.labels[i] as i32));
        w.write_record(&record).map_err(std::io::Error::other)?;
    }
    w.flush()?;

    let mut manifest = RunManifest::new("extract-features", args.schema);
    manifest.plan_fingerprint = Some(checkpoint.plan_fingerprint.clone());
    manifest.outputs = vec![file_name(args.output)];
    manifest.settings = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "layer": match args.layer {
            FeatureLayer::PrePredictor => "pre_predictor".to_string(),
            FeatureLayer::Hidden(i) => format!("hidden{i}"),
        },
        "instances": batch.n_instances,
        "feature_width": features.ncols(),
    });
    manifest.write(&manifest_path(args.output))?;
    Ok((batch.n_instances, features.ncols()))
}
