//! `optibench`: build the zoo, run the benchmark, merge runs, print and verify results.
//!
//! Exit codes: 0 success, 1 config error, 2 partial attack failure (or failed
//! verification), 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use optibench_core::bench::{
    build_zoo, emit_curves, emit_leaderboard, import_results, leaderboard_csv, run_benchmark, verify_run, BenchConfig,
    BenchError, RunOptions,
};
use optibench_core::zoo::persist_model;

#[derive(Parser)]
#[command(name = "optibench", version, about = "Query-budgeted benchmark of gradient-based evasion attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model zoo operations.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
    /// Run every configured attack against every zoo model.
    Run(RunArgs),
    /// Merge stored runs and write their leaderboard and curves.
    Import {
        /// A run directory, or a directory of run directories.
        path: PathBuf,
        #[arg(long, env = "OPTIBENCH_OUTPUT_DIR")]
        output: Option<PathBuf>,
    },
    /// Print the leaderboard of stored runs.
    Leaderboard {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Re-check every stored adversarial example against the persisted models.
    Verify { path: PathBuf },
}

#[derive(Subcommand)]
enum ZooAction {
    /// Train the configured models and write them as model files.
    Build {
        #[command(flatten)]
        config: ConfigArg,
        /// Directory for the model files.
        #[arg(long, default_value = "zoo")]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Benchmark config (TOML); the built-in default when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-sample query budget, overriding the config.
    #[arg(long)]
    budget: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Previous runs to merge; their attacks are not re-run.
    #[arg(long)]
    import: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, env = "OPTIBENCH_OUTPUT_DIR")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn load_config(arg: &ConfigArg) -> Result<(BenchConfig, PathBuf), BenchError> {
    match &arg.config {
        Some(path) => {
            let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
            Ok((BenchConfig::from_file(path)?, base))
        }
        None => Ok((BenchConfig::default_config(), PathBuf::from("."))),
    }
}

fn run(cli: Cli) -> Result<u8, BenchError> {
    match cli.command {
        Command::Zoo { action: ZooAction::Build { config, out, jobs } } => {
            let (config, base) = load_config(&config)?;
            let entries = build_zoo(&config, &base, jobs)?;
            std::fs::create_dir_all(&out)?;
            for e in &entries {
                let path = out.join(format!("{}.json", e.id));
                persist_model(e, &path)?;
                println!("{}\t{:?}\tclean accuracy {:.4}\t{}", e.id, e.training, e.clean_accuracy, path.display());
            }
            Ok(0)
        }
        Command::Run(args) => {
            let (mut config, base) = load_config(&args.config)?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(budget) = args.budget {
                config.budget = budget;
            }
            let opts = RunOptions { jobs: args.jobs, import: args.import, output_dir: args.output };
            let summary = run_benchmark(&config, &base, &opts)?;
            for (norm, entries) in &summary.leaderboard.groups {
                println!("# {norm}");
                print!("{}", leaderboard_csv(entries));
            }
            for f in &summary.failures {
                eprintln!("attack {} failed on {}: {}", f.attack, f.model, f.error);
            }
            println!("results written to {}", summary.output_dir.display());
            Ok(if summary.failures.is_empty() { 0 } else { 2 })
        }
        Command::Import { path, output } => {
            let imported = import_results(&path)?;
            let board = imported.store.leaderboard()?;
            let out = output.unwrap_or(path);
            std::fs::create_dir_all(&out)?;
            emit_leaderboard(&out, &board)?;
            emit_curves(&out, &imported.store)?;
            println!(
                "imported {} records for {} attacks; reports written to {}",
                imported.records.len(),
                imported.attacks.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Leaderboard { path, format } => {
            let board = import_results(&path)?.store.leaderboard()?;
            match format {
                Format::Csv => {
                    for (norm, entries) in &board.groups {
                        println!("# {norm}");
                        print!("{}", leaderboard_csv(entries));
                    }
                    for i in &board.incomplete {
                        println!("# incomplete: {} ({}) missing {}", i.attack, i.norm, i.missing.join(", "));
                    }
                }
                Format::Json => {
                    println!("{}", serde_json::to_string_pretty(&board).map_err(|e| BenchError::Io(e.to_string()))?)
                }
            }
            Ok(0)
        }
        Command::Verify { path } => {
            let report = verify_run(&path)?;
            for f in &report.failures {
                eprintln!("{f}");
            }
            println!("verified {} adversarial examples, {} failures", report.checked, report.failures.len());
            Ok(if report.ok() { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
