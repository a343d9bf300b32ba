//! Versioned JSON model files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DatasetSpec, Result, TrainConfig, TrainingKind, ZooEntry, ZooError};
use crate::autodiff::{Activation, Layer, MlpModel};

pub const MAGIC: &str = "optibench-model";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Arch {
    input_dim: usize,
    widths: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Training {
    kind: TrainingKind,
    config: TrainConfig,
    dataset: DatasetSpec,
    config_digest: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    magic: String,
    format_version: u64,
    id: String,
    arch: Arch,
    layers: Vec<LayerFile>,
    training: Training,
    clean_accuracy: f64,
}

pub fn persist_model(entry: &ZooEntry, path: &Path) -> Result<()> {
    let file = ModelFile {
        magic: MAGIC.into(),
        format_version: FORMAT_VERSION,
        id: entry.id.clone(),
        arch: Arch { input_dim: entry.model.input_dim(), widths: entry.model.widths() },
        layers: entry
            .model
            .layers()
            .iter()
            .map(|l| LayerFile {
                activation: l.activation(),
                weights: l.weight_rows().map(<[f64]>::to_vec).collect(),
                bias: l.bias().to_vec(),
            })
            .collect(),
        training: Training {
            kind: entry.training,
            config: entry.train_config.clone(),
            dataset: entry.dataset.clone(),
            config_digest: entry.config_digest.clone(),
        },
        clean_accuracy: entry.clean_accuracy,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| ZooError::MalformedModelFile(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ZooEntry> {
    let text = fs::read_to_string(path)?;
    let malformed = |m: String| ZooError::MalformedModelFile(format!("{}: {m}", path.display()));
    let value: Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if value.get("magic").and_then(Value::as_str) != Some(MAGIC) {
        return Err(malformed("missing or wrong magic".into()));
    }
    match value.get("format_version").and_then(Value::as_u64) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(ZooError::UnsupportedFormatVersion(v)),
        None => return Err(malformed("missing format_version".into())),
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    let layers = file
        .layers
        .into_iter()
        .map(|l| Layer::new(l.weights, l.bias, l.activation))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| malformed(e.to_string()))?;
    let model = MlpModel::new(layers).map_err(|e| malformed(e.to_string()))?;
    if model.input_dim() != file.arch.input_dim || model.widths() != file.arch.widths {
        return Err(malformed("arch does not match layers".into()));
    }
    if !(0.0..=1.0).contains(&file.clean_accuracy) {
        return Err(malformed(format!("clean_accuracy {} outside [0, 1]", file.clean_accuracy)));
    }
    Ok(ZooEntry {
        id: file.id,
        model,
        training: file.training.kind,
        dataset: file.training.dataset,
        train_config: file.training.config,
        config_digest: file.training.config_digest,
        clean_accuracy: file.clean_accuracy,
    })
}
