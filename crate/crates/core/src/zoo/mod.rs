//! Synthetic datasets, standard and adversarial training, and model files.

mod dataset;
mod persist;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, MlpModel};
use crate::norm::Norm;

pub use dataset::{blob_center, generate_dataset, ring_radius, DatasetKind, DatasetSpec, LabeledDataset, Sample};
pub use persist::{load_model, persist_model, FORMAT_VERSION, MAGIC};
pub use train::{accuracy, train, train_adversarial, train_standard, InnerMaximization, TrainConfig};

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("unsupported model format version {0}")]
    UnsupportedFormatVersion(u64),
    #[error("malformed model file: {0}")]
    MalformedModelFile(String),
    #[error(transparent)]
    Model(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ZooError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingKind {
    Standard,
    Adversarial,
}

/// Everything needed to rebuild one zoo member from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
}

impl ModelSpec {
    pub fn digest(&self) -> String {
        crate::digest::json_digest(&(&self.dataset, &self.train))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooEntry {
    pub id: String,
    pub model: MlpModel,
    pub training: TrainingKind,
    pub dataset: DatasetSpec,
    pub train_config: TrainConfig,
    /// SHA-256 of the dataset spec and training config.
    pub config_digest: String,
    /// Accuracy on the held-out split.
    pub clean_accuracy: f64,
}

impl ZooEntry {
    pub fn held_out(&self) -> Result<Vec<Sample>> {
        let data = generate_dataset(&self.dataset)?;
        Ok(data.split().1.to_vec())
    }

    pub fn evaluate_clean_accuracy(&self) -> Result<f64> {
        accuracy(&self.model, &self.held_out()?)
    }
}

/// Trains the model described by `spec`.
pub fn build_entry(spec: &ModelSpec) -> Result<ZooEntry> {
    if spec.id.is_empty() {
        return Err(ZooError::InvalidSpec("model id must not be empty".into()));
    }
    let data = generate_dataset(&spec.dataset)?;
    let model = train(&data, &spec.train)?;
    let clean_accuracy =
        accuracy(&model, data.split().1).map_err(|_| ZooError::TrainingDiverged { epoch: spec.train.epochs })?;
    let training = match spec.train.adversarial {
        Some(_) => TrainingKind::Adversarial,
        None => TrainingKind::Standard,
    };
    Ok(ZooEntry {
        id: spec.id.clone(),
        model,
        training,
        dataset: spec.dataset.clone(),
        train_config: spec.train.clone(),
        config_digest: spec.digest(),
        clean_accuracy,
    })
}

fn blobs() -> DatasetSpec {
    DatasetSpec {
        kind: DatasetKind::GaussianBlobs,
        dimension: 4,
        class_count: 4,
        sample_count: 1280,
        noise_scale: 0.08,
        seed: 101,
    }
}

fn rings() -> DatasetSpec {
    DatasetSpec {
        kind: DatasetKind::ConcentricRings,
        dimension: 2,
        class_count: 2,
        sample_count: 1280,
        noise_scale: 0.02,
        seed: 202,
    }
}

fn config(seed: u64, adversarial: Option<InnerMaximization>) -> TrainConfig {
    TrainConfig { hidden: vec![32, 32], epochs: 300, lr: 0.2, momentum: 0.9, seed, adversarial }
}

/// Two dataset kinds, each with a standard and an adversarially trained MLP.
pub fn default_zoo() -> Vec<ModelSpec> {
    let inner = |norm, epsilon| Some(InnerMaximization { norm, epsilon, pgd_steps: 7 });
    vec![
        ModelSpec { id: "blobs-std".into(), dataset: blobs(), train: config(1, None) },
        ModelSpec { id: "blobs-adv".into(), dataset: blobs(), train: config(2, inner(Norm::LInf, 0.1)) },
        ModelSpec { id: "rings-std".into(), dataset: rings(), train: config(3, None) },
        ModelSpec { id: "rings-adv".into(), dataset: rings(), train: config(4, inner(Norm::L2, 0.05)) },
    ]
}
