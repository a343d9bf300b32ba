use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
format_version = 1
seed = 3
budget = 100
samples_per_model = 8
norms = ["linf"]
output_dir = "out"

[[zoo.models]]
id = "rings"
dataset = { kind = "concentric_rings", dimension = 2, class_count = 2, sample_count = 100, noise_scale = 0.02, seed = 2 }
train = { hidden = [8], epochs = 40, lr = 0.2, seed = 2 }

[[attacks]]
name = "fgsm"
type = "fgsm"
epsilon = 0.2

[[attacks]]
name = "fmn"
type = "fmn"
norm = "linf"
steps = 20
"#;

const DLR: &str =
    "\n[[attacks]]\nname = \"dlr\"\ntype = \"fgsm\"\nepsilon = 0.2\nloss = \"difference_of_logits_ratio\"\n";

fn optibench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optibench"))
        .args(args)
        .current_dir(dir)
        .env_remove("OPTIBENCH_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) {
    std::fs::write(dir.join("bench.toml"), text).unwrap();
}

#[test]
fn run_verify_and_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), CONFIG);
    let out = optibench(dir.path(), &["run", "--config", "bench.toml", "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "records.jsonl",
        "manifest.json",
        "run.json",
        "leaderboard_linf.csv",
        "leaderboard_linf.html",
        "curves_rings_linf.csv",
    ] {
        assert!(dir.path().join("out").join(f).is_file(), "missing {f}");
    }
    let out = optibench(dir.path(), &["verify", "out"]);
    assert_eq!(out.status.code(), Some(0));
    let out = optibench(dir.path(), &["leaderboard", "out"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rank,attack,global_optimality,local_rings,median_queries"), "{text}");
    let out = optibench(dir.path(), &["leaderboard", "out", "--format", "json"]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["groups"]["linf"].as_array().unwrap().len(), 2);
}

#[test]
fn import_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), CONFIG);
    assert_eq!(optibench(dir.path(), &["run", "-c", "bench.toml"]).status.code(), Some(0));
    let out = optibench(dir.path(), &["import", "out", "--output", "merged"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(dir.path().join("merged/leaderboard_linf.csv")).unwrap(),
        std::fs::read(dir.path().join("out/leaderboard_linf.csv")).unwrap()
    );
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), CONFIG);
    let out = Command::new(env!("CARGO_BIN_EXE_optibench"))
        .args(["run", "--config", "bench.toml", "--budget", "50", "--seed", "9"])
        .current_dir(dir.path())
        .env("OPTIBENCH_OUTPUT_DIR", dir.path().join("elsewhere"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("elsewhere/manifest.json")).unwrap()).unwrap();
    assert_eq!((manifest["budget"].as_u64(), manifest["seed"].as_u64()), (Some(50), Some(9)));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &CONFIG.replace("budget = 100", "budget = 0"));
    let out = optibench(dir.path(), &["run", "--config", "bench.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));

    write_config(dir.path(), &format!("{CONFIG}{DLR}"));
    let out = optibench(dir.path(), &["run", "--config", "bench.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dlr"));

    let out = optibench(dir.path(), &["verify", "does-not-exist"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zoo_build_writes_loadable_models() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), CONFIG);
    let out = optibench(dir.path(), &["zoo", "build", "--config", "bench.toml", "--out", "models"]);
    assert_eq!(out.status.code(), Some(0));
    let entry = optibench_core::zoo::load_model(&dir.path().join("models/rings.json")).unwrap();
    assert_eq!(entry.id, "rings");
}
