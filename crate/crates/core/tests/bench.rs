mod common;

use std::path::Path;

use common::{config, outputs, DDN, DLR_PGD, FGSM, FMN_L2, FMN_LINF, PGD_LINF};
use optibench_core::bench::*;
use optibench_core::norm::Norm;
use optibench_core::optimality::{OptimalityError, RobustnessCurve};
use optibench_core::zoo::default_zoo;

fn run(cfg: &BenchConfig, out: &Path, jobs: Option<usize>, import: Option<&Path>) -> RunSummary {
    let opts = RunOptions { jobs, import: import.map(Path::to_path_buf), output_dir: Some(out.to_path_buf()) };
    run_benchmark(cfg, Path::new("."), &opts).unwrap()
}

#[test]
fn default_config_matches_default_zoo() {
    let cfg = BenchConfig::default_config();
    assert_eq!(cfg.zoo.models.len(), default_zoo().len());
    for (m, spec) in cfg.zoo.models.iter().zip(default_zoo()) {
        assert_eq!(m.id, spec.id);
        assert_eq!(m.dataset.as_ref(), Some(&spec.dataset));
        assert_eq!(m.train.as_ref(), Some(&spec.train));
    }
    assert!(cfg.attacks.len() >= 5);
    assert_eq!((cfg.budget, cfg.samples_per_model), (1000, 256));
}

#[test]
fn single_attack_is_its_own_envelope() {
    let mut cfg = config(&[FMN_L2]);
    cfg.zoo.models.truncate(1);
    cfg.samples_per_model = 4;
    let dir = tempfile::tempdir().unwrap();
    let s = run(&cfg, dir.path(), None, None);
    let group = &s.leaderboard.groups[&Norm::L2];
    assert_eq!(group.len(), 1);
    assert_eq!((group[0].rank, group[0].global_optimality), (1, 1.0));
}

#[test]
fn reruns_and_worker_counts_give_identical_bytes() {
    let cfg = config(&[FGSM, PGD_LINF, DDN]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&cfg, a.path(), Some(1), None);
    run(&cfg, b.path(), Some(4), None);
    let (fa, fb) = (outputs(a.path()), outputs(b.path()));
    assert!(fa.iter().any(|(n, _)| n == "records.jsonl"));
    assert_eq!(fa, fb);
}

#[test]
fn crashing_attack_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let with = run(&config(&[FGSM, PGD_LINF, DLR_PGD]), dir.path(), None, None);
    assert_eq!(with.failures.len(), 1);
    assert_eq!((with.failures[0].attack.as_str(), with.failures[0].model.as_str()), ("pgd-dlr", "rings"));
    assert!(with.leaderboard.incomplete.iter().any(|i| i.attack == "pgd-dlr" && i.missing == ["rings"]));
    assert!(with.records.iter().all(|r| r.attack != "pgd-dlr"));

    let clean_dir = tempfile::tempdir().unwrap();
    let without = run(&config(&[FGSM, PGD_LINF]), clean_dir.path(), None, None);
    assert_eq!(with.leaderboard.groups, without.leaderboard.groups);
}

#[test]
fn import_then_extend_matches_monolithic_run() {
    let (mono, first, second) =
        (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let all = run(&config(&[FGSM, FMN_LINF, DDN]), mono.path(), None, None);
    run(&config(&[FGSM, DDN]), first.path(), None, None);
    let merged = run(&config(&[FGSM, DDN, FMN_LINF]), second.path(), None, Some(first.path()));
    assert_eq!(merged.leaderboard, all.leaderboard);
    assert_eq!(outputs(second.path()), outputs(mono.path()));
}

#[test]
fn import_refuses_other_budget() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&config(&[FGSM]), a.path(), None, None);
    let mut other = config(&[FGSM]);
    other.budget = 100;
    run(&other, b.path(), None, None);
    let parent = tempfile::tempdir().unwrap();
    for (name, src) in [("a", a.path()), ("b", b.path())] {
        let dst = parent.path().join(name);
        std::fs::create_dir_all(&dst).unwrap();
        for f in ["manifest.json", "records.jsonl"] {
            std::fs::copy(src.join(f), dst.join(f)).unwrap();
        }
    }
    assert!(matches!(import_results(parent.path()), Err(BenchError::IncompatibleRuns(_))));
    let opts = RunOptions {
        import: Some(a.path().to_path_buf()),
        output_dir: Some(parent.path().join("c")),
        ..Default::default()
    };
    let err = run_benchmark(&other, Path::new("."), &opts).unwrap_err();
    assert!(matches!(err, BenchError::IncompatibleRuns(_)));
}

#[test]
fn empty_directory_imports_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let imported = import_results(dir.path()).unwrap();
    assert!(imported.store.is_empty());
    assert!(matches!(imported.store.lower_envelope("anything", Norm::L2), Err(OptimalityError::EmptyEnsemble { .. })));
}

#[test]
fn corrupt_records_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    run(&config(&[FGSM]), dir.path(), None, None);
    let path = dir.path().join("records.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&path, text).unwrap();
    let err = import_results(dir.path()).unwrap_err();
    assert!(matches!(err, BenchError::MalformedRecordFile(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn leaderboard_files_agree() {
    let dir = tempfile::tempdir().unwrap();
    run(&config(&[FGSM, PGD_LINF]), dir.path(), None, None);
    let csv = std::fs::read_to_string(dir.path().join("leaderboard_linf.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rank,attack,global_optimality,local_blobs,local_rings,median_queries");
    assert_eq!(lines.len(), 3);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("leaderboard_linf.json")).unwrap()).unwrap();
    for (line, entry) in lines[1..].iter().zip(json["entries"].as_array().unwrap()) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0].parse::<u64>().unwrap(), entry["rank"].as_u64().unwrap());
        assert_eq!(cells[1], entry["attack"].as_str().unwrap());
        assert_eq!(cells[2].parse::<f64>().unwrap(), entry["global_optimality"].as_f64().unwrap());
        assert_eq!(cells[3].parse::<f64>().unwrap(), entry["local"]["blobs"].as_f64().unwrap());
        assert_eq!(cells[4].parse::<f64>().unwrap(), entry["local"]["rings"].as_f64().unwrap());
        match entry["median_queries"].as_f64() {
            Some(q) => assert_eq!(cells[5].parse::<f64>().unwrap(), q),
            None => assert_eq!(cells[5], ""),
        }
    }
    let html = std::fs::read_to_string(dir.path().join("leaderboard_linf.html")).unwrap();
    assert!(html.starts_with("<!DOCTYPE html>") && !html.contains("http"));
    assert!(dir.path().join("curves_rings_linf.csv").is_file());
}

#[test]
fn curve_export_example() {
    let inf = f64::INFINITY;
    let curve = RobustnessCurve::new("m", Norm::L2, &[0.1, 0.2, inf, inf], &[true; 4], 1.0).unwrap();
    let rows: Vec<(f64, f64)> = curve_rows("a", &curve).iter().map(|r| (r.epsilon, r.robust_accuracy)).collect();
    assert_eq!(rows, vec![(0.0, 1.0), (0.1, 0.75), (0.2, 0.5)]);
}

#[test]
fn verify_accepts_run_and_catches_tampering() {
    let dir = tempfile::tempdir().unwrap();
    run(&config(&[PGD_LINF, DDN]), dir.path(), None, None);
    let report = verify_run(dir.path()).unwrap();
    assert!(report.ok(), "{:?}", report.failures);
    assert!(report.checked > 0);

    let path = dir.path().join("records.jsonl");
    let mut records = read_records(&path).unwrap();
    let r = records.iter_mut().find(|r| r.succeeded && r.best_distance > 0.0).unwrap();
    r.delta = Some(vec![0.0; r.delta.as_ref().unwrap().len()]);
    write_records(&path, &records).unwrap();
    assert!(!verify_run(dir.path()).unwrap().ok());
}

#[test]
fn config_errors_name_the_field() {
    let bad = |text: String| match BenchConfig::parse(&text) {
        Err(BenchError::Config { field, message }) => (field, message),
        other => panic!("expected config error, got {other:?}"),
    };
    let base = common::SMALL_ZOO.to_string();

    let (field, message) = bad(format!(
        "{base}\n{FGSM}\n[[attacks]]\nname = \"p\"\ntype = \"pgd\"\nnorm = \"linf\"\nepsilon = -1.0\nsteps = 5\n"
    ));
    assert_eq!(field, "attacks[1]");
    assert!(message.contains("epsilon"), "{message}");

    let (field, _) = bad(base.replace("budget = 200", "budget = 0"));
    assert_eq!(field, "budget");

    let (field, _) = bad(format!("{base}\n{DDN}").replace("norms = [\"l2\", \"linf\"]", "norms = [\"linf\"]"));
    assert_eq!(field, "attacks[0].norm");

    let (_, message) = bad(base.replace("budget = 200", "budget = 200\nbogus = 1"));
    assert!(message.contains("bogus") && message.contains("line"), "{message}");

    let (field, _) = bad(format!("{base}\n{FGSM}\n{FGSM}"));
    assert_eq!(field, "attacks[1].name");

    let (field, message) = bad(format!("{base}\n{}", FGSM.replace("\"fgsm\"\ntype", "\"envelope\"\ntype")));
    assert_eq!(field, "attacks[0].name");
    assert!(message.contains("reserved"), "{message}");
}

#[test]
fn missing_model_file_is_a_config_error() {
    let mut cfg = config(&[FGSM]);
    cfg.zoo.models[0].dataset = None;
    cfg.zoo.models[0].train = None;
    cfg.zoo.models[0].path = Some("nowhere/model.json".into());
    cfg.validate().unwrap();
    let err = run_benchmark(&cfg, Path::new("."), &RunOptions::default()).unwrap_err();
    assert!(matches!(&err, BenchError::Config { field, .. } if field == "zoo.models[0].path"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn persisted_models_reproduce_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let trained = run(&config(&[FGSM]), a.path(), None, None);
    let mut cfg = config(&[FGSM]);
    for m in &mut cfg.zoo.models {
        m.path = Some(a.path().join("models").join(format!("{}.json", m.id)));
        m.dataset = None;
        m.train = None;
    }
    let loaded = run(&cfg, b.path(), None, None);
    assert_eq!(trained.digest, loaded.digest);
    assert_eq!(trained.records, loaded.records);
}
