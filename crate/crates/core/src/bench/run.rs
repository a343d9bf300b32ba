//! Training or loading the zoo and executing every attack against it.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use super::config::valid_identifier;
use super::emit::{emit_curves, emit_leaderboard};
use super::records::{
    import_results, write_records, AttackFailure, Manifest, ManifestAttack, ManifestModel, RunInfo, RunRecord,
    MANIFEST_FILE, MODELS_DIR, RECORDS_FILE, RUN_INFO_FILE,
};
use super::{BenchConfig, BenchError, Result, FRAMEWORK_VERSION};
use crate::attacks::{run_attack, AttackConfig, SampleOutcome};
use crate::autodiff::MlpModel;
use crate::digest::{bytes_digest, json_digest};
use crate::norm::Norm;
use crate::optimality::{AttackResult, EnvelopeStore, IncompleteAttack, Leaderboard, ModelSamples};
use crate::tracker::{SampleId, TrackedModel};
use crate::zoo::{build_entry, load_model, persist_model, ModelSpec, Sample, ZooEntry};

/// Samples per tracker; work is split into (attack, model, shard) tasks.
const SHARD_SIZE: usize = 32;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; defaults to the number of CPUs.
    pub jobs: Option<usize>,
    /// Previous run directory (or directory of runs) to merge.
    pub import: Option<PathBuf>,
    /// Replaces the configured output directory.
    pub output_dir: Option<PathBuf>,
}

/// A zoo member with its evaluation samples.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub entry: ZooEntry,
    pub samples: Vec<Sample>,
    pub sample_ids: Vec<SampleId>,
    pub clean_correct: Vec<bool>,
    pub eps_max: BTreeMap<Norm, f64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub digest: String,
    pub manifest: Manifest,
    pub records: Vec<RunRecord>,
    pub store: EnvelopeStore,
    pub leaderboard: Leaderboard,
    pub failures: Vec<AttackFailure>,
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(BenchError::Config { field: "jobs".into(), message: "must be >= 1".into() });
        }
        builder = builder.num_threads(j);
    }
    builder.build().map_err(|e| BenchError::Io(format!("cannot start worker pool: {e}")))
}

/// Trains (or loads) every configured model, in parallel.
pub fn build_zoo(config: &BenchConfig, base_dir: &Path, jobs: Option<usize>) -> Result<Vec<ZooEntry>> {
    config.check_paths(base_dir)?;
    pool(jobs)?.install(|| {
        config
            .zoo
            .models
            .par_iter()
            .map(|m| {
                let mut entry = match (&m.dataset, &m.train, &m.path) {
                    (Some(dataset), Some(train), None) => {
                        build_entry(&ModelSpec { id: m.id.clone(), dataset: dataset.clone(), train: train.clone() })?
                    }
                    (_, _, Some(path)) => load_model(&base_dir.join(path))?,
                    _ => unreachable!("validated config"),
                };
                entry.id = m.id.clone();
                Ok(entry)
            })
            .collect()
    })
}

/// Picks the first `samples_per_model` held-out samples of every model.
pub fn prepare_zoo(config: &BenchConfig, entries: Vec<ZooEntry>) -> Result<Vec<PreparedModel>> {
    entries
        .into_iter()
        .enumerate()
        .map(|(i, entry)| {
            let held_out = entry.held_out()?;
            if held_out.len() < config.samples_per_model {
                return Err(BenchError::Config {
                    field: "samples_per_model".into(),
                    message: format!(
                        "model {} has only {} held-out samples, {} requested",
                        entry.id,
                        held_out.len(),
                        config.samples_per_model
                    ),
                });
            }
            if entry.model.input_dim() != entry.dataset.dimension {
                return Err(BenchError::Config {
                    field: format!("zoo.models[{i}]"),
                    message: "model input dimension does not match its dataset".into(),
                });
            }
            let samples: Vec<Sample> = held_out.into_iter().take(config.samples_per_model).collect();
            let clean_correct = samples
                .iter()
                .map(|s| Ok(entry.model.predict(&s.x)? == s.y))
                .collect::<Result<Vec<bool>, crate::autodiff::AutodiffError>>()
                .map_err(crate::zoo::ZooError::from)?;
            let eps_max = config.norms.iter().map(|n| (*n, config.eps_max_for(*n, entry.dataset.dimension))).collect();
            Ok(PreparedModel {
                sample_ids: (0..samples.len() as SampleId).collect(),
                samples,
                clean_correct,
                eps_max,
                entry,
            })
        })
        .collect()
}

fn model_digest(model: &MlpModel) -> String {
    let mut bytes = Vec::new();
    for l in model.layers() {
        bytes.extend((l.inputs() as u64).to_le_bytes());
        bytes.extend((l.outputs() as u64).to_le_bytes());
        bytes.extend(format!("{:?}", l.activation()).as_bytes());
        for v in l.weight_rows().flatten().chain(l.bias()) {
            bytes.extend(v.to_le_bytes());
        }
    }
    bytes_digest(&bytes)
}

/// Covers everything that decides whether two runs are comparable: zoo
/// parameters and samples, seed, budget, caps and framework version.
fn run_digest(config: &BenchConfig, zoo: &[PreparedModel]) -> String {
    #[derive(Serialize)]
    struct Model<'a> {
        id: &'a str,
        config_digest: &'a str,
        parameters: String,
        samples: usize,
        eps_max: &'a BTreeMap<Norm, f64>,
    }
    #[derive(Serialize)]
    struct Input<'a> {
        framework_version: &'a str,
        seed: u64,
        budget: u64,
        samples_per_model: usize,
        models: Vec<Model<'a>>,
    }
    let mut models: Vec<Model> = zoo
        .iter()
        .map(|m| Model {
            id: &m.entry.id,
            config_digest: &m.entry.config_digest,
            parameters: model_digest(&m.entry.model),
            samples: m.samples.len(),
            eps_max: &m.eps_max,
        })
        .collect();
    models.sort_by(|a, b| a.id.cmp(b.id));
    json_digest(&Input {
        framework_version: FRAMEWORK_VERSION,
        seed: config.seed,
        budget: config.budget,
        samples_per_model: config.samples_per_model,
        models,
    })
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".into()
    }
}

fn run_shard(
    attack: &AttackConfig,
    model: &PreparedModel,
    range: std::ops::Range<usize>,
    budget: u64,
    seed: u64,
) -> Result<Vec<SampleOutcome>, String> {
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        let samples = range.clone().map(|i| (model.sample_ids[i], model.samples[i].x.as_slice(), model.samples[i].y));
        let mut tracker =
            TrackedModel::wrap(&model.entry.model, samples, attack.norm(), budget).map_err(|e| e.to_string())?;
        run_attack(attack, &mut tracker, seed).map(|o| o.samples).map_err(|e| e.to_string())
    }));
    outcome.unwrap_or_else(|p| Err(panic_message(p)))
}

type PairOutcome = Result<Vec<SampleOutcome>, String>;

/// Runs every attack on every model; results come back in (attack, model) order.
fn execute(
    config: &BenchConfig,
    attacks: &[&AttackConfig],
    zoo: &[PreparedModel],
    jobs: Option<usize>,
) -> Result<Vec<Vec<PairOutcome>>> {
    let mut tasks = Vec::new();
    for (a, _) in attacks.iter().enumerate() {
        for (m, model) in zoo.iter().enumerate() {
            let n = model.samples.len();
            for start in (0..n).step_by(SHARD_SIZE) {
                tasks.push((a, m, start..(start + SHARD_SIZE).min(n)));
            }
        }
    }
    let shards: Vec<PairOutcome> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|(a, m, range)| run_shard(attacks[*a], &zoo[*m], range.clone(), config.budget, config.seed))
            .collect()
    });
    let mut merged: Vec<Vec<PairOutcome>> =
        attacks.iter().map(|_| zoo.iter().map(|_| Ok(Vec::new())).collect()).collect();
    for ((a, m, _), shard) in tasks.iter().zip(shards) {
        let slot = &mut merged[*a][*m];
        match (slot.as_mut(), shard) {
            (Ok(acc), Ok(part)) => acc.extend(part),
            (Ok(_), Err(e)) => *slot = Err(e),
            (Err(_), _) => {}
        }
    }
    Ok(merged)
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn resolve_output(config: &BenchConfig, base_dir: &Path, opts: &RunOptions) -> PathBuf {
    match &opts.output_dir {
        Some(dir) => dir.clone(),
        None if config.output_dir.is_absolute() => config.output_dir.clone(),
        None => base_dir.join(&config.output_dir),
    }
}

/// Full pipeline: zoo, attacks, records, store, leaderboard and reports.
///
/// With `opts.import`, attacks already present in the imported runs are not
/// re-run; their stored records are merged instead, and the written outputs
/// are the same as for one run containing every attack.
pub fn run_benchmark(config: &BenchConfig, base_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let started = now_ms();
    let zoo = prepare_zoo(config, build_zoo(config, base_dir, opts.jobs)?)?;
    let digest = run_digest(config, &zoo);

    let imported = match &opts.import {
        Some(path) => import_results(path)?,
        None => Default::default(),
    };
    if let Some(d) = &imported.digest {
        if *d != digest {
            return Err(BenchError::IncompatibleRuns(format!(
                "imported digest {d} does not match this config ({digest})"
            )));
        }
    }
    let mut attacks: BTreeMap<String, ManifestAttack> = imported.attacks.clone();
    let mut to_run = Vec::new();
    for a in &config.attacks {
        match attacks.get(&a.name) {
            Some(prev) if prev.config != *a => {
                return Err(BenchError::IncompatibleRuns(format!(
                    "attack {} was imported with a different configuration",
                    a.name
                )))
            }
            Some(_) => {}
            None => to_run.push(a),
        }
    }
    let imported_failed: Vec<&str> = imported.failures.iter().map(|f| f.attack.as_str()).collect();
    to_run.retain(|a| !imported_failed.contains(&a.name.as_str()));

    let outcomes = execute(config, &to_run, &zoo, opts.jobs)?;

    let mut store = imported.store.clone();
    for m in &zoo {
        let samples = ModelSamples {
            sample_ids: m.sample_ids.clone(),
            clean_correct: m.clean_correct.clone(),
            eps_max: m.eps_max.clone(),
        };
        store.register_model(&m.entry.id, samples).map_err(|e| BenchError::IncompatibleRuns(e.to_string()))?;
    }
    let mut records = imported.records.clone();
    let mut failures = imported.failures.clone();
    let mut results = Vec::new();
    for (attack, per_model) in to_run.iter().zip(outcomes) {
        let failed: Vec<AttackFailure> = per_model
            .iter()
            .zip(&zoo)
            .filter_map(|(o, m)| {
                o.as_ref().err().map(|e| AttackFailure {
                    attack: attack.name.clone(),
                    norm: attack.norm(),
                    model: m.entry.id.clone(),
                    error: e.clone(),
                })
            })
            .collect();
        if !failed.is_empty() {
            // a crashed attack is excluded entirely so it cannot move the envelope
            failures.extend(failed);
            continue;
        }
        attacks.insert(
            attack.name.clone(),
            ManifestAttack { name: attack.name.clone(), norm: attack.norm(), config: (*attack).clone() },
        );
        for (samples, m) in per_model.into_iter().zip(&zoo) {
            let samples = samples.expect("checked above");
            let recs: Vec<_> = samples.iter().map(|s| s.record.clone()).collect();
            results.push(AttackResult::from_records(&attack.name, &m.entry.id, attack.norm(), &m.sample_ids, &recs)?);
            records.extend(samples.into_iter().map(|s| RunRecord {
                digest: digest.clone(),
                attack: attack.name.clone(),
                model: m.entry.id.clone(),
                sample_id: s.record.sample_id,
                norm: s.record.norm,
                best_distance: s.record.best_distance,
                succeeded: s.record.succeeded,
                queries_at_best: s.record.queries_at_best,
                total_queries: s.total_queries,
                delta: s.record.best_delta.map(|d| d.into_inner()),
            }));
        }
    }
    store.incremental_update(results)?;
    let mut leaderboard = store.leaderboard()?;
    let mut failed_attacks: BTreeMap<(Norm, String), Vec<String>> = BTreeMap::new();
    for f in &failures {
        failed_attacks.entry((f.norm, f.attack.clone())).or_default().push(f.model.clone());
    }
    for ((norm, attack), missing) in failed_attacks {
        leaderboard.incomplete.push(IncompleteAttack { attack, norm, missing });
    }
    leaderboard.incomplete.sort_by(|a, b| (a.norm, &a.attack).cmp(&(b.norm, &b.attack)));
    failures.sort_by(|a, b| (&a.attack, &a.model).cmp(&(&b.attack, &b.model)));

    let position: BTreeMap<&str, BTreeMap<SampleId, usize>> = zoo
        .iter()
        .map(|m| (m.entry.id.as_str(), m.sample_ids.iter().enumerate().map(|(i, s)| (*s, i)).collect()))
        .collect();
    records.sort_by_key(|r| (r.attack.clone(), r.model.clone(), position[r.model.as_str()][&r.sample_id]));

    let mut models: Vec<ManifestModel> = zoo
        .iter()
        .map(|m| ManifestModel {
            id: m.entry.id.clone(),
            dimension: m.entry.dataset.dimension,
            class_count: m.entry.dataset.class_count,
            training: m.entry.training,
            clean_accuracy: m.entry.clean_accuracy,
            config_digest: m.entry.config_digest.clone(),
            sample_ids: m.sample_ids.clone(),
            clean_correct: m.clean_correct.clone(),
            eps_max: m.eps_max.clone(),
        })
        .collect();
    models.sort_by(|a, b| a.id.cmp(&b.id));
    let manifest = Manifest {
        format_version: super::CONFIG_FORMAT_VERSION,
        framework_version: FRAMEWORK_VERSION.into(),
        digest: digest.clone(),
        seed: config.seed,
        budget: config.budget,
        samples_per_model: config.samples_per_model,
        norms: config.norms.clone(),
        models,
        attacks: attacks.into_values().collect(),
        failures: failures.clone(),
    };

    let out = resolve_output(config, base_dir, opts);
    fs::create_dir_all(out.join(MODELS_DIR)).map_err(|e| BenchError::Io(format!("{}: {e}", out.display())))?;
    for m in &zoo {
        debug_assert!(valid_identifier(&m.entry.id));
        persist_model(&m.entry, &out.join(MODELS_DIR).join(format!("{}.json", m.entry.id)))?;
    }
    write_records(&out.join(RECORDS_FILE), &records)?;
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    emit_leaderboard(&out, &leaderboard)?;
    emit_curves(&out, &store)?;
    let info = RunInfo {
        framework_version: FRAMEWORK_VERSION.into(),
        digest: digest.clone(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    write_json(&out.join(RUN_INFO_FILE), &info)?;

    Ok(RunSummary { output_dir: out, digest, manifest, records, store, leaderboard, failures })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| BenchError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}
