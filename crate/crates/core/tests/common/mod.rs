#![allow(dead_code)]

use std::path::Path;

use optibench_core::bench::BenchConfig;
use optibench_core::norm::Norm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two quickly trained models (4-class blobs, 2-class rings) and no attacks.
pub const SMALL_ZOO: &str = r#"
format_version = 1
seed = 7
budget = 200
samples_per_model = 16
norms = ["l2", "linf"]

[[zoo.models]]
id = "blobs"
dataset = { kind = "gaussian_blobs", dimension = 3, class_count = 4, sample_count = 200, noise_scale = 0.08, seed = 1 }
train = { hidden = [16], epochs = 60, lr = 0.2, seed = 1 }

[[zoo.models]]
id = "rings"
dataset = { kind = "concentric_rings", dimension = 2, class_count = 2, sample_count = 200, noise_scale = 0.02, seed = 2 }
train = { hidden = [16, 16], epochs = 60, lr = 0.2, seed = 2 }
"#;

pub const FGSM: &str = "[[attacks]]\nname = \"fgsm\"\ntype = \"fgsm\"\nepsilon = 0.2\n";
pub const PGD_LINF: &str =
    "[[attacks]]\nname = \"pgd-linf\"\ntype = \"pgd\"\nnorm = \"linf\"\nepsilon = 0.2\nsteps = 20\n";
pub const FMN_LINF: &str = "[[attacks]]\nname = \"fmn-linf\"\ntype = \"fmn\"\nnorm = \"linf\"\nsteps = 50\n";
pub const DDN: &str = "[[attacks]]\nname = \"ddn\"\ntype = \"ddn\"\nsteps = 50\ninit_radius = 0.1\n";
pub const FMN_L2: &str = "[[attacks]]\nname = \"fmn-l2\"\ntype = \"fmn\"\nnorm = \"l2\"\nsteps = 50\n";
/// Needs at least four classes, so it fails on the two-class model.
pub const DLR_PGD: &str =
    "[[attacks]]\nname = \"pgd-dlr\"\ntype = \"pgd\"\nnorm = \"linf\"\nepsilon = 0.2\nsteps = 10\nloss = \"difference_of_logits_ratio\"\n";

pub fn config(parts: &[&str]) -> BenchConfig {
    let mut text = SMALL_ZOO.to_string();
    for p in parts {
        text.push('\n');
        text.push_str(p);
    }
    BenchConfig::parse(&text).unwrap()
}

/// Every output file except the wall-clock `run.json`, by relative path.
pub fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

/// `|w·x + b| / ‖w‖_q`, computed without touching the model.
pub fn analytic_distance(w: &[f64], b: f64, x: &[f64], dual: Norm) -> f64 {
    let f: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
    f.abs() / dual.length(w)
}

/// Closed-form minimizer for p ∈ {2, ∞}.
pub fn minimizer(w: &[f64], b: f64, x: &[f64], norm: Norm) -> Vec<f64> {
    let f: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
    match norm {
        Norm::L2 => {
            let n2: f64 = w.iter().map(|a| a * a).sum();
            x.iter().zip(w).map(|(c, a)| c - f / n2 * a).collect()
        }
        _ => {
            let n1: f64 = w.iter().map(|a| a.abs()).sum();
            x.iter().zip(w).map(|(c, a)| c - f / n1 * a.signum()).collect()
        }
    }
}

pub struct LinearCase {
    pub w: Vec<f64>,
    pub b: f64,
    pub samples: Vec<(u64, Vec<f64>, usize)>,
}

pub fn linear_case(seed: u64, dim: usize, count: usize) -> LinearCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b = -w.iter().sum::<f64>() * 0.5;
    let mut samples = Vec::new();
    while samples.len() < count {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.02..0.98)).collect();
        let inside =
            [Norm::L2, Norm::LInf].iter().all(|n| minimizer(&w, b, &x, *n).iter().all(|v| (0.0..=1.0).contains(v)));
        let f: f64 = w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>() + b;
        if inside && f.abs() > 1e-6 {
            let y = usize::from(f > 0.0);
            samples.push((samples.len() as u64, x, y));
        }
    }
    LinearCase { w, b, samples }
}
