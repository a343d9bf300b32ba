//! Declarative benchmark configuration (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchError, Result};
use crate::attacks::AttackConfig;
use crate::norm::Norm;
use crate::zoo::{DatasetSpec, TrainConfig};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// The built-in benchmark: four models, eight attacks, ℓ2 and ℓ∞.
pub const DEFAULT_CONFIG: &str = include_str!("../../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub format_version: u32,
    pub seed: u64,
    /// Forward plus backward passes allowed per sample.
    pub budget: u64,
    pub samples_per_model: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub norms: Vec<Norm>,
    /// Overrides of the per-norm curve cap, applied to every model.
    #[serde(default)]
    pub eps_max: BTreeMap<Norm, f64>,
    pub zoo: ZooConfig,
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooConfig {
    pub models: Vec<ZooModelConfig>,
}

/// A zoo member, either trained from `dataset` + `train` or loaded from `path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooModelConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Identifiers end up in file names and CSV cells.
pub(crate) fn valid_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)
            .map_err(|e| BenchError::Config { field: String::new(), message: e.to_string().trim_end().to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("built-in config is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field except model file existence, see [`Self::check_paths`].
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, message: String| Err(BenchError::Config { field: field.into(), message });
        if self.format_version != CONFIG_FORMAT_VERSION {
            return err(
                "format_version",
                format!("unsupported version {}, expected {CONFIG_FORMAT_VERSION}", self.format_version),
            );
        }
        if self.budget == 0 {
            return err("budget", "must be >= 1".into());
        }
        if self.samples_per_model == 0 {
            return err("samples_per_model", "must be >= 1".into());
        }
        if self.norms.is_empty() {
            return err("norms", "at least one norm group is required".into());
        }
        for (norm, eps) in &self.eps_max {
            if !(*eps > 0.0 && eps.is_finite()) {
                return err(&format!("eps_max.{norm}"), format!("must be positive and finite, got {eps}"));
            }
        }
        if self.zoo.models.is_empty() {
            return err("zoo.models", "at least one model is required".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, m) in self.zoo.models.iter().enumerate() {
            let at = |f: &str| format!("zoo.models[{i}].{f}");
            if !valid_identifier(&m.id) {
                return err(&at("id"), format!("`{}` must be non-empty ASCII letters, digits, '-', '_' or '.'", m.id));
            }
            if !ids.insert(m.id.as_str()) {
                return err(&at("id"), format!("duplicate model id `{}`", m.id));
            }
            match (&m.dataset, &m.train, &m.path) {
                (Some(d), Some(t), None) => {
                    d.validate().map_err(|e| BenchError::Config { field: at("dataset"), message: e.to_string() })?;
                    t.validate().map_err(|e| BenchError::Config { field: at("train"), message: e.to_string() })?;
                }
                (None, None, Some(_)) => {}
                _ => return err(&format!("zoo.models[{i}]"), "give either `dataset` and `train`, or `path`".into()),
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, a) in self.attacks.iter().enumerate() {
            let at = format!("attacks[{i}]");
            if !valid_identifier(&a.name) {
                return err(
                    &format!("{at}.name"),
                    format!("`{}` must be non-empty ASCII letters, digits, '-', '_' or '.'", a.name),
                );
            }
            if a.name == super::emit::ENVELOPE {
                return err(&format!("{at}.name"), format!("`{}` is reserved for the lower envelope", a.name));
            }
            if !names.insert(a.name.as_str()) {
                return err(&format!("{at}.name"), format!("duplicate attack name `{}`", a.name));
            }
            a.validate().map_err(|e| BenchError::Config { field: at.clone(), message: e.to_string() })?;
            if !self.norms.contains(&a.norm()) {
                return err(&format!("{at}.norm"), format!("{} is not among the configured norms", a.norm()));
            }
        }
        Ok(())
    }

    /// Checks that every model path exists relative to `base_dir`.
    pub fn check_paths(&self, base_dir: &Path) -> Result<()> {
        for (i, m) in self.zoo.models.iter().enumerate() {
            if let Some(p) = &m.path {
                if !base_dir.join(p).is_file() {
                    return Err(BenchError::Config {
                        field: format!("zoo.models[{i}].path"),
                        message: format!("model file {} does not exist", base_dir.join(p).display()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Configured cap, else the per-norm default for dimension `d`.
    pub fn eps_max_for(&self, norm: Norm, dimension: usize) -> f64 {
        self.eps_max.get(&norm).copied().unwrap_or_else(|| norm.default_eps_max(dimension))
    }
}
