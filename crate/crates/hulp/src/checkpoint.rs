//! Versioned, human-diffable JSON checkpoints.

use std::path::Path;

use hulp_core::autodiff::Matrix;
use hulp_core::{ConceptSchema, HulpConfig, HulpModel, TimeGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CHECKPOINT_FORMAT: &str = "hulp-ckpt/1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint format '{found}' (expected '{CHECKPOINT_FORMAT}')")]
    Version { found: String },
    #[error("parameter '{name}' has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("checkpoint schema [{checkpoint}] does not match expected schema [{expected}]")]
    SchemaMismatch { checkpoint: String, expected: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] hulp_core::Error),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    schema: ConceptSchema,
    config: HulpConfig,
    signal_dim: usize,
    grid_edges: Vec<f64>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
    len: usize,
    values: Vec<f64>,
}

pub fn save_checkpoint(model: &HulpModel) -> Vec<u8> {
    let doc = Document {
        format: CHECKPOINT_FORMAT.into(),
        schema: model.schema().clone(),
        config: model.config().clone(),
        signal_dim: model.signal_dim(),
        grid_edges: model.grid().edges().to_vec(),
        params: model
            .params()
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.into(),
                shape: [t.rows(), t.cols()],
                len: t.len(),
                values: t.as_slice().to_vec(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("checkpoint serializes");
    out.push(b'\n');
    out
}

fn json_error(e: serde_json::Error) -> CheckpointError {
    if e.is_eof() {
        CheckpointError::Truncated(e.to_string())
    } else {
        CheckpointError::Malformed(e.to_string())
    }
}

/// Parses and validates a checkpoint; never returns a partially loaded model.
pub fn load_checkpoint(bytes: &[u8]) -> Result<HulpModel, CheckpointError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(json_error)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(CHECKPOINT_FORMAT) => {}
        Some(other) => return Err(CheckpointError::Version { found: other.into() }),
        None => return Err(CheckpointError::Malformed("missing 'format' field".into())),
    }
    let doc: Document = serde_json::from_value(value).map_err(json_error)?;
    let grid = TimeGrid::from_edges(doc.grid_edges)?;
    let mut model = HulpModel::new(doc.schema, doc.config, grid, doc.signal_dim, 0)?;
    if doc.params.len() != model.params().len() {
        return Err(CheckpointError::Truncated(format!(
            "{} parameter tensors, model has {}",
            doc.params.len(),
            model.params().len()
        )));
    }
    let mut tensors = Vec::with_capacity(doc.params.len());
    for (entry, (name, expected)) in doc.params.into_iter().zip(model.params().iter()) {
        if entry.name != name {
            return Err(CheckpointError::Malformed(format!(
                "parameter '{}' found where '{name}' was expected",
                entry.name
            )));
        }
        let found = (entry.shape[0], entry.shape[1]);
        if found != expected.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name,
                found,
                expected: expected.shape(),
            });
        }
        if entry.len != entry.values.len() || entry.len != found.0 * found.1 {
            return Err(CheckpointError::Truncated(format!(
                "parameter '{}' declares {} values for shape {found:?} and holds {}",
                entry.name,
                entry.len,
                entry.values.len()
            )));
        }
        tensors.push(Matrix::from_vec(found.0, found.1, entry.values)?);
    }
    for (slot, t) in model.params_mut().tensors_mut().iter_mut().zip(tensors) {
        *slot = t;
    }
    Ok(model)
}

/// Rejects a model whose schema differs from `expected`, naming both.
pub fn ensure_schema(model: &HulpModel, expected: &ConceptSchema) -> Result<(), CheckpointError> {
    if model.schema() != expected {
        return Err(CheckpointError::SchemaMismatch {
            checkpoint: model.schema().describe(),
            expected: expected.describe(),
        });
    }
    Ok(())
}

pub fn write_checkpoint(model: &HulpModel, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, save_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(HulpModel, Vec<u8>), CheckpointError> {
    let bytes = std::fs::read(path)?;
    Ok((load_checkpoint(&bytes)?, bytes))
}

/// Short content hash used as the served model version.
pub fn model_version(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}
