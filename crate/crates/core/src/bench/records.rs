//! Run manifests, line-delimited records and importing past runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BenchError, Result};
use crate::attacks::AttackConfig;
use crate::norm::Norm;
use crate::optimality::{AttackResult, EnvelopeStore, ModelSamples};
use crate::tracker::SampleId;
use crate::zoo::TrainingKind;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const RUN_INFO_FILE: &str = "run.json";
pub const MODELS_DIR: &str = "models";

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One line of `records.jsonl`. An unbroken sample has `best_distance: null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub digest: String,
    pub attack: String,
    pub model: String,
    pub sample_id: SampleId,
    pub norm: Norm,
    #[serde(with = "inf_as_null")]
    pub best_distance: f64,
    pub succeeded: bool,
    pub queries_at_best: u64,
    pub total_queries: u64,
    /// Best perturbation, present iff `succeeded`.
    #[serde(default)]
    pub delta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestModel {
    pub id: String,
    pub dimension: usize,
    pub class_count: usize,
    pub training: TrainingKind,
    pub clean_accuracy: f64,
    pub config_digest: String,
    pub sample_ids: Vec<SampleId>,
    pub clean_correct: Vec<bool>,
    pub eps_max: BTreeMap<Norm, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestAttack {
    pub name: String,
    pub norm: Norm,
    pub config: AttackConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackFailure {
    pub attack: String,
    pub norm: Norm,
    pub model: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub framework_version: String,
    pub digest: String,
    pub seed: u64,
    pub budget: u64,
    pub samples_per_model: usize,
    pub norms: Vec<Norm>,
    pub models: Vec<ManifestModel>,
    /// Attacks with records in this run, sorted by name.
    pub attacks: Vec<ManifestAttack>,
    pub failures: Vec<AttackFailure>,
}

/// Wall-clock information, kept apart so every other output is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub framework_version: String,
    pub digest: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| BenchError::Io(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text =
        fs::read_to_string(path).map_err(|e| BenchError::MalformedRecordFile(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| BenchError::MalformedRecordFile(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub(crate) fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text =
        fs::read_to_string(&path).map_err(|e| BenchError::MalformedRecordFile(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| BenchError::MalformedRecordFile(format!("{}: {e}", path.display())))
}

/// Past runs merged into one store.
#[derive(Debug, Clone, Default)]
pub struct Imported {
    /// Shared digest, `None` when nothing was imported.
    pub digest: Option<String>,
    pub manifest: Option<Manifest>,
    pub store: EnvelopeStore,
    pub attacks: BTreeMap<String, ManifestAttack>,
    pub records: Vec<RunRecord>,
    pub failures: Vec<AttackFailure>,
}

fn run_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join(MANIFEST_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Reads a run directory, or every run directory directly inside `path`, and
/// merges their records. All runs must share one config digest.
pub fn import_results(path: &Path) -> Result<Imported> {
    let mut imported = Imported::default();
    let mut by_attack: BTreeMap<(String, String), Vec<RunRecord>> = BTreeMap::new();
    for dir in run_dirs(path)? {
        let manifest = read_manifest(&dir)?;
        match &imported.digest {
            Some(d) if *d != manifest.digest => {
                return Err(BenchError::IncompatibleRuns(format!(
                    "{} has digest {}, expected {d}",
                    dir.display(),
                    manifest.digest
                )))
            }
            Some(_) => {}
            None => {
                imported.digest = Some(manifest.digest.clone());
                for m in &manifest.models {
                    let samples = ModelSamples {
                        sample_ids: m.sample_ids.clone(),
                        clean_correct: m.clean_correct.clone(),
                        eps_max: m.eps_max.clone(),
                    };
                    imported
                        .store
                        .register_model(&m.id, samples)
                        .map_err(|e| BenchError::MalformedRecordFile(format!("{}: {e}", dir.display())))?;
                }
                imported.manifest = Some(manifest.clone());
            }
        }
        let mut fresh: BTreeMap<(String, String), Vec<RunRecord>> = BTreeMap::new();
        for r in read_records(&dir.join(RECORDS_FILE))? {
            if r.digest != manifest.digest {
                return Err(BenchError::IncompatibleRuns(format!(
                    "record for {}/{} in {} carries digest {}",
                    r.attack,
                    r.model,
                    dir.display(),
                    r.digest
                )));
            }
            fresh.entry((r.attack.clone(), r.model.clone())).or_default().push(r);
        }
        for (key, recs) in fresh {
            match by_attack.get(&key) {
                Some(existing) if *existing == recs => {}
                Some(_) => {
                    return Err(BenchError::IncompatibleRuns(format!(
                        "attack {} on {} appears in several runs with different records",
                        key.0, key.1
                    )))
                }
                None => {
                    by_attack.insert(key, recs);
                }
            }
        }
        for a in manifest.attacks {
            match imported.attacks.get(&a.name) {
                Some(existing) if *existing != a => {
                    return Err(BenchError::IncompatibleRuns(format!(
                        "attack {} is configured differently across runs",
                        a.name
                    )))
                }
                _ => {
                    imported.attacks.insert(a.name.clone(), a);
                }
            }
        }
        for f in manifest.failures {
            if !imported.failures.contains(&f) {
                imported.failures.push(f);
            }
        }
    }
    let models: BTreeMap<String, ModelSamples> =
        imported.store.models().map(|(id, s)| (id.to_string(), s.clone())).collect();
    for ((attack, model), recs) in by_attack {
        let samples = models
            .get(&model)
            .ok_or_else(|| BenchError::MalformedRecordFile(format!("records for unknown model {model}")))?;
        let norm = recs[0].norm;
        let by_id: BTreeMap<SampleId, &RunRecord> = recs.iter().map(|r| (r.sample_id, r)).collect();
        if by_id.len() != recs.len() || recs.len() != samples.sample_ids.len() {
            return Err(BenchError::MalformedRecordFile(format!(
                "{attack} on {model}: records do not match the sample list"
            )));
        }
        let mut distances = Vec::new();
        let mut queries = Vec::new();
        for id in &samples.sample_ids {
            let r = by_id.get(id).ok_or_else(|| {
                BenchError::MalformedRecordFile(format!("{attack} on {model}: no record for sample {id}"))
            })?;
            if r.norm != norm {
                return Err(BenchError::MalformedRecordFile(format!("{attack} on {model}: mixed norms")));
            }
            distances.push(r.best_distance);
            queries.push(r.queries_at_best);
        }
        imported
            .store
            .insert(AttackResult { attack, model, norm, distances, queries_at_best: queries })
            .map_err(|e| BenchError::MalformedRecordFile(e.to_string()))?;
        imported.records.extend(recs);
    }
    Ok(imported)
}
