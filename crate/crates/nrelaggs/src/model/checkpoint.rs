//! Self-contained model checkpoints.
//!
//! A checkpoint bundles everything needed to score unseen instances of the
//! same database: the aggregation plan (plus its fingerprint so mismatches
//! are caught early), the fitted column preprocessor, the label mapping, the
//! model configuration, and the trained parameters.
//!
//! On disk: magic `NRCK`, a version, a JSON metadata block, then the flat
//! `f32` parameter vector in little-endian order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, ModelConfig, NRelaggsModel};
use crate::error::ModelError;
use crate::plan::AggregationPlan;
use crate::preprocess::{LabelMap, PreprocessorState};

const MAGIC: &[u8; 4] = b"NRCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Metadata {
    plan: AggregationPlan,
    plan_fingerprint: String,
    preprocessor: PreprocessorState,
    labels: LabelMap,
    config: ModelConfig,
    encoded_widths: Vec<usize>,
    seed: u64,
    n_params: usize,
}

/// A trained model plus the fitted state needed to apply it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub plan: AggregationPlan,
    pub plan_fingerprint: String,
    pub preprocessor: PreprocessorState,
    pub labels: LabelMap,
    pub config: ModelConfig,
    pub encoded_widths: Vec<usize>,
    pub seed: u64,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn from_model(
        model: &NRelaggsModel<f32>,
        preprocessor: &PreprocessorState,
        labels: &LabelMap,
    ) -> Checkpoint {
        Checkpoint {
            plan: model.plan().clone(),
            plan_fingerprint: model.plan().fingerprint(),
            preprocessor: preprocessor.clone(),
            labels: labels.clone(),
            config: model.config().clone(),
            encoded_widths: model.widths().encoded.clone(),
            seed: model.seed(),
            params: model.params_flat(),
        }
    }

    /// Rebuild the model and load the stored parameters into it.
    pub fn restore_model(&self) -> Result<NRelaggsModel<f32>, ModelError> {
        if self.plan.fingerprint() != self.plan_fingerprint {
            return Err(ModelError::BadCheckpoint(format!(
                "plan fingerprint mismatch: stored {}, recomputed {}",
                self.plan_fingerprint,
                self.plan.fingerprint()
            )));
        }
        let mut model = build_model(&self.encoded_widths, &self.plan, &self.config, self.seed)?;
        model.set_params_flat(&self.params)?;
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), ModelError> {
    let metadata = Metadata {
        plan: checkpoint.plan.clone(),
        plan_fingerprint: checkpoint.plan_fingerprint.clone(),
        preprocessor: checkpoint.preprocessor.clone(),
        labels: checkpoint.labels.clone(),
        config: checkpoint.config.clone(),
        encoded_widths: checkpoint.encoded_widths.clone(),
        seed: checkpoint.seed,
        n_params: checkpoint.params.len(),
    };
    let json = serde_json::to_vec(&metadata)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &checkpoint.params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::BadCheckpoint(format!(
            "bad magic {:?} (is this a checkpoint file?)",
            magic
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::BadCheckpoint(format!(
            "unsupported version {version} (this build reads {VERSION})"
        )));
    }
    let json_len = read_u64(&mut r)? as usize;
    let mut json = vec![0u8; json_len];
    read_exact(&mut r, &mut json)?;
    let metadata: Metadata = serde_json::from_slice(&json)
        .map_err(|e| ModelError::BadCheckpoint(format!("metadata does not parse: {e}")))?;
    let mut params = Vec::with_capacity(metadata.n_params);
    let mut buf = [0u8; 4];
    for _ in 0..metadata.n_params {
        read_exact(&mut r, &mut buf)?;
        params.push(f32::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ModelError::BadCheckpoint("trailing bytes after parameters".into()));
    }
    Ok(Checkpoint {
        plan: metadata.plan,
        plan_fingerprint: metadata.plan_fingerprint,
        preprocessor: metadata.preprocessor,
        labels: metadata.labels,
        config: metadata.config,
        encoded_widths: metadata.encoded_widths,
        seed: metadata.seed,
        params,
    })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf)
        .map_err(|_| ModelError::BadCheckpoint("file is truncated".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{build_instance, collate};
    use crate::datagen::{synthetic_snowflake, SynthConfig};
    use crate::plan::generate_aggregation_plan;
    use crate::preprocess::fit_preprocessor;

    fn trained_fixture() -> (Checkpoint, Vec<f32>) {
        let db = synthetic_snowflake(&SynthConfig { instances: 12, seed: 51, ..Default::default() });
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
        let mut model = build_model::<f32>(&encoded, &plan, &ModelConfig::default(), 9).unwrap();
        let batches = [batch.clone()];
        crate::model::train(&mut model, &batches, None).unwrap();
        let scores = model.predict_scores(&batch).unwrap();
        (Checkpoint::from_model(&model, &state, &labels), scores)
    }

    #[test]
    fn round_trip_restores_identical_scores() {
        let (checkpoint, scores) = trained_fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nrck");
        save_checkpoint(&path, &checkpoint).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, checkpoint.params);
        assert_eq!(loaded.plan, checkpoint.plan);
        assert_eq!(loaded.preprocessor, checkpoint.preprocessor);
        assert_eq!(loaded.labels, checkpoint.labels);

        // rebuild and rescore: bit-for-bit identical
        let model = loaded.restore_model().unwrap();
        let db = synthetic_snowflake(&SynthConfig { instances: 12, seed: 51, ..Default::default() });
        let bundles: Vec<_> = db
            .instance_keys()
            .iter()
            .map(|k| build_instance(&db, &loaded.preprocessor, &loaded.plan, &loaded.labels, k).unwrap())
            .collect();
        let rescored = model.predict_scores(&collate(&bundles).unwrap()).unwrap();
        assert_eq!(rescored, scores);
    }

    #[test]
    fn corrupted_files_are_rejected_with_reasons() {
        let (checkpoint, _) = trained_fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nrck");
        save_checkpoint(&path, &checkpoint).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // wrong magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::BadCheckpoint(_))));

        // unsupported version
        let mut bad = bytes.clone();
        bad[4] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::BadCheckpoint(_))));

        // truncated parameters
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::BadCheckpoint(_))));

        // trailing garbage
        let mut bad = bytes.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::BadCheckpoint(_))));

        // tampered plan: fingerprint check fires on restore
        std::fs::write(&path, &bytes).unwrap();
        let mut loaded = load_checkpoint(&path).unwrap();
        loaded.plan = loaded.plan.inverted();
        assert!(matches!(loaded.restore_model(), Err(ModelError::BadCheckpoint(_))));
    }
}
