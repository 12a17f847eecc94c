//! Model checkpoints: a flat little-endian `f64` tensor dump (`model.bin`)
//! and a JSON manifest (`model.json`) listing dimensions, tensor offsets,
//! the run seed and the config hash.
//!
//! Tensors are stored in the order w1, b1, w2, b2, scales; matrices are
//! row-major. Absent tensors (no `scales`) are left out of the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trainer::model::MlpModel;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const WEIGHTS_FILE: &str = "model.bin";
pub const MANIFEST_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the weights file, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
    pub config_hash: String,
    pub toolkit_version: String,
}

fn shape_of(model: &MlpModel, name: &str) -> Vec<usize> {
    match name {
        "w1" => vec![model.w1.rows(), model.w1.cols()],
        "w2" => vec![model.w2.rows(), model.w2.cols()],
        "b1" => vec![model.b1.len()],
        "b2" => vec![model.b2.len()],
        _ => vec![model.num_classes],
    }
}

/// Writes `model.bin` and `model.json` into `dir`.
pub fn save_checkpoint(dir: &Path, model: &MlpModel, seed: u64, config_hash: &str) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for (name, data) in model.tensors() {
        let Some(data) = data else { continue };
        tensors.push(TensorEntry { name: name.to_string(), shape: shape_of(model, name), offset: bytes.len() / 8 });
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        input_dim: model.input_dim,
        hidden_dim: model.hidden_dim,
        num_classes: model.num_classes,
        tensors,
        seed,
        config_hash: config_hash.to_string(),
        toolkit_version: crate::TOOLKIT_VERSION.to_string(),
    };
    let bin = dir.join(WEIGHTS_FILE);
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(MlpModel, CheckpointManifest)> {
    let json = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json.display())))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", manifest.format_version)));
    }
    let bin = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{}: length {} is not a multiple of 8", bin.display(), bytes.len())));
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();

    let mut model = MlpModel::zeros(manifest.input_dim, manifest.hidden_dim, manifest.num_classes);
    let mut used = 0;
    for t in &manifest.tensors {
        let expected = shape_of(&model, &t.name);
        if t.shape != expected {
            return Err(Error::Consistency(format!("tensor {} has shape {:?}, expected {expected:?}", t.name, t.shape)));
        }
        let len: usize = t.shape.iter().product();
        let data = values
            .get(t.offset..t.offset + len)
            .ok_or_else(|| Error::Format(format!("tensor {} runs past the end of {}", t.name, bin.display())))?
            .to_vec();
        used += len;
        match t.name.as_str() {
            "w1" => model.w1 = Matrix::from_vec(t.shape[0], t.shape[1], data),
            "b1" => model.b1 = data,
            "w2" => model.w2 = Matrix::from_vec(t.shape[0], t.shape[1], data),
            "b2" => model.b2 = data,
            "scales" => model.scales = Some(data),
            other => return Err(Error::Format(format!("unknown tensor {other:?}"))),
        }
    }
    if used != values.len() {
        return Err(Error::Consistency(format!("{} values in weights file, manifest covers {used}", values.len())));
    }
    Ok((model, manifest))
}
