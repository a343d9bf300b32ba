//! Synthetic labeled datasets in the unit box.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ZooError;
use crate::autodiff::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussianBlobs,
    ConcentricRings,
    XorGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub dimension: usize,
    pub class_count: usize,
    pub sample_count: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), ZooError> {
        let bad = |m: String| Err(ZooError::InvalidSpec(m));
        if self.dimension < 2 {
            return bad(format!("dimension must be >= 2, got {}", self.dimension));
        }
        if self.class_count < 2 {
            return bad(format!("class_count must be >= 2, got {}", self.class_count));
        }
        if self.sample_count == 0 {
            return bad("sample_count must be >= 1".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise_scale must be finite and >= 0, got {}", self.noise_scale));
        }
        if self.kind == DatasetKind::XorGrid && self.class_count != 2 {
            return bad(format!("xor_grid needs exactly 2 classes, got {}", self.class_count));
        }
        Ok(())
    }

    /// Number of samples in the held-out split (the last 20%, rounded up).
    pub fn test_len(&self) -> usize {
        self.sample_count.div_ceil(5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    /// `(train, held_out)`; the held-out split is the last 20% of samples.
    pub fn split(&self) -> (&[Sample], &[Sample]) {
        self.samples.split_at(self.samples.len() - self.spec.test_len())
    }
}

/// Center of blob `class` on a circle of radius 0.3 around the box center.
pub fn blob_center(class: usize, classes: usize, dimension: usize) -> Vec<f64> {
    let angle = TAU * class as f64 / classes as f64;
    let mut c = vec![0.5; dimension];
    c[0] = 0.5 + 0.3 * angle.cos();
    c[1] = 0.5 + 0.3 * angle.sin();
    c
}

/// Radius of ring `class`, evenly spaced in (0.1, 0.4).
pub fn ring_radius(class: usize, classes: usize) -> f64 {
    0.1 + 0.3 * (class as f64 + 0.5) / classes as f64
}

/// Labels cycle `0, 1, .., C-1`, so every split stays balanced within one sample.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<LabeledDataset, ZooError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, c, noise) = (spec.dimension, spec.class_count, spec.noise_scale);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        noise * z
    };
    let mut samples = Vec::with_capacity(spec.sample_count);
    for i in 0..spec.sample_count {
        let y = i % c;
        let mut x = match spec.kind {
            DatasetKind::GaussianBlobs => blob_center(y, c, d),
            DatasetKind::ConcentricRings => {
                let angle = rng.gen_range(0.0..TAU);
                let r = ring_radius(y, c) + gauss(&mut rng);
                let mut x = vec![0.5; d];
                x[0] += r * angle.cos();
                x[1] += r * angle.sin();
                x
            }
            DatasetKind::XorGrid => {
                let flip = rng.gen_bool(0.5);
                let first = if flip { 0.75 } else { 0.25 };
                // label 0 on the diagonal quadrants, 1 off-diagonal
                let second = if (y == 0) == flip { 0.75 } else { 0.25 };
                let mut x = vec![0.5; d];
                x[0] = first;
                x[1] = second;
                x
            }
        };
        for v in &mut x {
            *v = (*v + gauss(&mut rng)).clamp(0.0, 1.0);
        }
        samples.push(Sample { x: Vector::new(x).expect("finite by construction"), y });
    }
    Ok(LabeledDataset { spec: spec.clone(), samples })
}
