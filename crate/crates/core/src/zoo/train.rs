//! Full-batch gradient descent with heavy-ball momentum, optionally min-max.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_entry, DatasetSpec, LabeledDataset, ModelSpec, Result, Sample, ZooEntry, ZooError};
use crate::attacks::{pgd, Direct, PgdParams};
use crate::autodiff::{init_mlp, LossKind, MlpModel, ParamGrads};
use crate::norm::{apply, Norm};

/// Inner maximization of adversarial training: PGD in the ε-ball of `norm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerMaximization {
    pub norm: Norm,
    pub epsilon: f64,
    pub pgd_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub seed: u64,
    #[serde(default)]
    pub adversarial: Option<InnerMaximization>,
}

fn default_momentum() -> f64 {
    0.9
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ZooError::InvalidSpec(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1".into());
        }
        if let Some(inner) = &self.adversarial {
            if !matches!(inner.norm, Norm::L2 | Norm::LInf) {
                return bad(format!("adversarial training supports l2 and linf, got {}", inner.norm));
            }
            if !(inner.epsilon >= 0.0 && inner.epsilon.is_finite()) {
                return bad(format!("adversarial epsilon must be finite and >= 0, got {}", inner.epsilon));
            }
            if inner.pgd_steps == 0 {
                return bad("pgd_steps must be >= 1".into());
            }
        }
        Ok(())
    }
}

pub fn accuracy(model: &MlpModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if model.predict(&s.x)? == s.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

fn adversarial_batch(model: &MlpModel, batch: &[Sample], inner: &InnerMaximization, seed: u64) -> Result<Vec<Sample>> {
    let params = PgdParams {
        norm: inner.norm,
        epsilon: inner.epsilon,
        steps: inner.pgd_steps,
        step_size: 2.0 * inner.epsilon / f64::from(inner.pgd_steps),
        random_start: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch
        .iter()
        .map(|s| {
            let mut oracle = Direct { model, label: s.y };
            let report = pgd(&mut oracle, &s.x, s.y, &params, LossKind::NegCrossEntropy, &mut rng)
                .map_err(|e| ZooError::InvalidSpec(format!("inner maximization failed: {e}")))?;
            let x = crate::autodiff::Vector::new(apply(&s.x, &report.delta))?;
            Ok(Sample { x, y: s.y })
        })
        .collect()
}

/// Trains on the training split of `data`. Deterministic in `config`.
pub fn train(data: &LabeledDataset, config: &TrainConfig) -> Result<MlpModel> {
    config.validate()?;
    let (train_split, _) = data.split();
    if train_split.is_empty() {
        return Err(ZooError::InvalidSpec("training split is empty".into()));
    }
    let spec = &data.spec;
    let mut model = init_mlp(spec.dimension, &config.hidden, spec.class_count, config.seed)?;
    let mut velocity = ParamGrads::zeros_like(&model);
    let scale = 1.0 / train_split.len() as f64;

    for epoch in 0..config.epochs {
        let adversarial;
        let batch = match &config.adversarial {
            Some(inner) => {
                adversarial = adversarial_batch(&model, train_split, inner, config.seed)
                    .map_err(|_| ZooError::TrainingDiverged { epoch })?;
                &adversarial[..]
            }
            None => train_split,
        };
        let mut grads = ParamGrads::zeros_like(&model);
        let mut loss = 0.0;
        for s in batch {
            // inputs are validated, so a failing pass means non-finite activations
            let trace = model.trace(&s.x).map_err(|_| ZooError::TrainingDiverged { epoch })?;
            // cross-entropy is the negated attack loss
            let (value, g) = LossKind::NegCrossEntropy
                .value_and_gradient(&trace.logits, s.y)
                .map_err(|_| ZooError::TrainingDiverged { epoch })?;
            loss -= value;
            let dlogits: Vec<f64> = g.iter().map(|v| -v).collect();
            model.backward(&trace, &dlogits, Some(&mut grads));
        }
        if !(loss * scale).is_finite() {
            return Err(ZooError::TrainingDiverged { epoch });
        }
        for (layer, ((gw, gb), (vw, vb))) in
            model.layers_mut().iter_mut().zip(grads.layers.iter().zip(&mut velocity.layers))
        {
            for ((w, g), v) in layer.weights_mut().iter_mut().zip(gw).zip(vw.iter_mut()) {
                *v = config.momentum * *v - config.lr * g * scale;
                *w += *v;
            }
            for ((b, g), v) in layer.bias_mut().iter_mut().zip(gb).zip(vb.iter_mut()) {
                *v = config.momentum * *v - config.lr * g * scale;
                *b += *v;
            }
        }
        let finite = model
            .layers()
            .iter()
            .all(|l| l.bias().iter().all(|v| v.is_finite()) && l.weight_rows().flatten().all(|v| v.is_finite()));
        if !finite {
            return Err(ZooError::TrainingDiverged { epoch });
        }
    }
    Ok(model)
}

fn entry(id: &str, dataset: &DatasetSpec, train: TrainConfig) -> Result<ZooEntry> {
    build_entry(&ModelSpec { id: id.into(), dataset: dataset.clone(), train })
}

/// Standard training with the default momentum.
pub fn train_standard(
    id: &str,
    dataset: &DatasetSpec,
    hidden: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<ZooEntry> {
    let config =
        TrainConfig { hidden: hidden.to_vec(), epochs, lr, momentum: default_momentum(), seed, adversarial: None };
    entry(id, dataset, config)
}

/// Min-max training: every epoch the batch is replaced by PGD adversarial examples.
pub fn train_adversarial(
    id: &str,
    dataset: &DatasetSpec,
    hidden: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
    inner: InnerMaximization,
) -> Result<ZooEntry> {
    let config = TrainConfig {
        hidden: hidden.to_vec(),
        epochs,
        lr,
        momentum: default_momentum(),
        seed,
        adversarial: Some(inner),
    };
    entry(id, dataset, config)
}
