//! Benchmark orchestration: config, execution, record files, reports.
//!
//! A run directory holds `manifest.json` (zoo, samples and attack configs),
//! `records.jsonl` (one line per attack, model and sample), `run.json`
//! (timestamps), the persisted models, leaderboards per norm group and
//! robustness-curve tables per model. Everything except `run.json` is a pure
//! function of the config.

mod config;
mod emit;
mod records;
mod run;
mod verify;

use thiserror::Error;

use crate::optimality::OptimalityError;
use crate::zoo::ZooError;

pub use config::{BenchConfig, ZooConfig, ZooModelConfig, CONFIG_FORMAT_VERSION, DEFAULT_CONFIG};
pub use emit::{curve_rows, emit_curves, emit_leaderboard, leaderboard_csv, leaderboard_html, CurveRow, ENVELOPE};
pub use records::{
    import_results, read_records, write_records, AttackFailure, Imported, Manifest, ManifestAttack, ManifestModel,
    RunInfo, RunRecord,
};
pub use run::{build_zoo, prepare_zoo, run_benchmark, PreparedModel, RunOptions, RunSummary};
pub use verify::{verify_run, VerifyReport};

pub const FRAMEWORK_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error{}: {message}", if field.is_empty() { String::new() } else { format!(" at `{field}`") })]
    Config { field: String, message: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),
    #[error("malformed record file: {0}")]
    MalformedRecordFile(String),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Optimality(#[from] OptimalityError),
}

impl BenchError {
    /// Process exit code: 1 for configuration problems, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Io(_) | BenchError::MalformedRecordFile(_) | BenchError::Zoo(ZooError::Io(_)) => 3,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
