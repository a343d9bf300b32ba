//! Gradient-based evasion attacks.
//!
//! Attacks talk to the model only through an [`Oracle`]. In a benchmark run the
//! oracle is a [`TrackedSample`], so every pass is budgeted and the tracker
//! captures the best candidate; adversarial training uses the unbudgeted
//! [`Direct`] oracle with the same attack code.

mod ddn;
mod fmn;
mod gradient;
mod search;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{input_gradient, AutodiffError, LossKind, MlpModel};
use crate::norm::{Norm, ProjectionError};
use crate::tracker::{PerturbationRecord, SampleId, TrackedModel, TrackerError};

pub use crate::norm::project;
pub use ddn::{ddn, DdnParams};
pub use fmn::{fmn, FmnParams};
pub use gradient::{fgsm, pgd, PgdParams, PgdReport};
pub use search::{bisect, eps_binary_search, Bracket};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("query budget exhausted")]
    BudgetExhausted,
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] AutodiffError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("tracker error: {0}")]
    Tracker(TrackerError),
}

impl From<TrackerError> for AttackError {
    fn from(e: TrackerError) -> Self {
        match e {
            TrackerError::BudgetExhausted(_) => AttackError::BudgetExhausted,
            TrackerError::Model(m) => AttackError::Model(m),
            other => AttackError::Tracker(other),
        }
    }
}

pub type Result<T, E = AttackError> = std::result::Result<T, E>;

/// Model access for a single sample with a fixed true label.
pub trait Oracle {
    fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>>;
    /// Gradient of `kind` at `x` with respect to the input, for the true label.
    fn gradient(&mut self, x: &[f64], kind: LossKind) -> Result<Vec<f64>>;
}

/// One sample of a [`TrackedModel`]; all passes are budgeted and recorded.
pub struct TrackedSample<'a, 'm> {
    tracker: &'a mut TrackedModel<'m>,
    id: SampleId,
}

impl<'a, 'm> TrackedSample<'a, 'm> {
    pub fn new(tracker: &'a mut TrackedModel<'m>, id: SampleId) -> Self {
        Self { tracker, id }
    }
}

impl Oracle for TrackedSample<'_, '_> {
    fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.tracker.forward(self.id, x)?)
    }

    fn gradient(&mut self, x: &[f64], kind: LossKind) -> Result<Vec<f64>> {
        Ok(self.tracker.backward(self.id, x, kind)?)
    }
}

/// Unbudgeted access to a model, used for adversarial training.
pub struct Direct<'m> {
    pub model: &'m MlpModel,
    pub label: usize,
}

impl Oracle for Direct<'_> {
    fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.model.forward(x)?)
    }

    fn gradient(&mut self, x: &[f64], kind: LossKind) -> Result<Vec<f64>> {
        Ok(input_gradient(self.model, x, self.label, kind)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    FixedBudget,
    MinimumNorm,
}

/// Fixed-budget attack used as the success predicate of an ε search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerAttack {
    Fgsm,
    Pgd {
        norm: Norm,
        steps: u32,
        /// Step size as a multiple of ε; defaults to `2 / steps`.
        #[serde(default)]
        relative_step: Option<f64>,
    },
}

impl InnerAttack {
    pub fn norm(&self) -> Norm {
        match self {
            InnerAttack::Fgsm => Norm::LInf,
            InnerAttack::Pgd { norm, .. } => *norm,
        }
    }

    fn params(&self, epsilon: f64) -> PgdParams {
        match self {
            InnerAttack::Fgsm => {
                PgdParams { norm: Norm::LInf, epsilon, steps: 1, step_size: epsilon, random_start: false }
            }
            InnerAttack::Pgd { norm, steps, relative_step } => PgdParams {
                norm: *norm,
                epsilon,
                steps: *steps,
                step_size: epsilon * relative_step.unwrap_or(2.0 / f64::from(*steps)),
                random_start: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackMethod {
    Fgsm {
        epsilon: f64,
    },
    Pgd {
        norm: Norm,
        epsilon: f64,
        steps: u32,
        #[serde(default)]
        step_size: Option<f64>,
        #[serde(default)]
        random_start: bool,
    },
    Ddn {
        steps: u32,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_init_radius")]
        init_radius: f64,
    },
    Fmn {
        norm: Norm,
        steps: u32,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    EpsSearch {
        inner: InnerAttack,
        eps_hi: f64,
        tolerance: f64,
    },
}

fn default_gamma() -> f64 {
    0.05
}

fn default_init_radius() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    1.0
}

/// A named, seeded attack configuration as declared in a benchmark config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub name: String,
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub method: AttackMethod,
}

impl AttackConfig {
    pub fn new(name: impl Into<String>, method: AttackMethod) -> Self {
        Self { name: name.into(), loss: None, seed: 0, method }
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = Some(loss);
        self
    }

    pub fn family(&self) -> AttackFamily {
        match self.method {
            AttackMethod::Fgsm { .. } | AttackMethod::Pgd { .. } => AttackFamily::FixedBudget,
            AttackMethod::Ddn { .. } | AttackMethod::Fmn { .. } | AttackMethod::EpsSearch { .. } => {
                AttackFamily::MinimumNorm
            }
        }
    }

    pub fn norm(&self) -> Norm {
        match &self.method {
            AttackMethod::Fgsm { .. } => Norm::LInf,
            AttackMethod::Pgd { norm, .. } | AttackMethod::Fmn { norm, .. } => *norm,
            AttackMethod::Ddn { .. } => Norm::L2,
            AttackMethod::EpsSearch { inner, .. } => inner.norm(),
        }
    }

    /// The configured loss, or the per-method default (cross-entropy for DDN,
    /// difference of logits otherwise).
    pub fn loss(&self) -> LossKind {
        self.loss.unwrap_or(match self.method {
            AttackMethod::Ddn { .. } => LossKind::NegCrossEntropy,
            _ => LossKind::DifferenceOfLogits,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AttackError::InvalidConfig(format!("{}: {msg}", self.name)));
        if self.name.is_empty() {
            return Err(AttackError::InvalidConfig("attack name must not be empty".into()));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match &self.method {
            AttackMethod::Fgsm { epsilon } if !positive(*epsilon) => bad(format!("epsilon must be > 0, got {epsilon}")),
            AttackMethod::Pgd { norm, epsilon, steps, step_size, .. } => {
                if !matches!(norm, Norm::L2 | Norm::LInf) {
                    bad(format!("pgd supports l2 and linf, got {norm}"))
                } else if !positive(*epsilon) {
                    bad(format!("epsilon must be > 0, got {epsilon}"))
                } else if *steps == 0 {
                    bad("steps must be >= 1".into())
                } else if step_size.is_some_and(|s| !positive(s)) {
                    bad("step_size must be > 0".into())
                } else {
                    Ok(())
                }
            }
            AttackMethod::Ddn { steps, gamma, init_radius } => {
                if *steps == 0 {
                    bad("steps must be >= 1".into())
                } else if !(*gamma > 0.0 && *gamma < 1.0) {
                    bad(format!("gamma must lie in (0, 1), got {gamma}"))
                } else if !positive(*init_radius) {
                    bad(format!("init_radius must be > 0, got {init_radius}"))
                } else {
                    Ok(())
                }
            }
            AttackMethod::Fmn { norm, steps, gamma, alpha } => {
                if *norm == Norm::L0 {
                    bad("fmn supports l1, l2 and linf".into())
                } else if *steps == 0 {
                    bad("steps must be >= 1".into())
                } else if !(*gamma > 0.0 && *gamma < 1.0) {
                    bad(format!("gamma must lie in (0, 1), got {gamma}"))
                } else if !positive(*alpha) {
                    bad(format!("alpha must be > 0, got {alpha}"))
                } else {
                    Ok(())
                }
            }
            AttackMethod::EpsSearch { inner, eps_hi, tolerance } => {
                if !positive(*eps_hi) || !positive(*tolerance) {
                    bad("eps_hi and tolerance must be > 0".into())
                } else {
                    match inner {
                        InnerAttack::Pgd { norm, steps, relative_step } => {
                            if !matches!(norm, Norm::L2 | Norm::LInf) {
                                bad(format!("inner pgd supports l2 and linf, got {norm}"))
                            } else if *steps == 0 {
                                bad("inner steps must be >= 1".into())
                            } else if relative_step.is_some_and(|s| !positive(s)) {
                                bad("relative_step must be > 0".into())
                            } else {
                                Ok(())
                            }
                        }
                        InnerAttack::Fgsm => Ok(()),
                    }
                }
            }
            _ => Ok(()),
        }
    }

    /// Runs the attack on one sample through `oracle`.
    pub fn attack_sample(&self, oracle: &mut impl Oracle, x: &[f64], y: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let loss = self.loss();
        match &self.method {
            AttackMethod::Fgsm { epsilon } => fgsm(oracle, x, y, *epsilon, loss).map(drop),
            AttackMethod::Pgd { norm, epsilon, steps, step_size, random_start } => {
                let params = PgdParams {
                    norm: *norm,
                    epsilon: *epsilon,
                    steps: *steps,
                    step_size: step_size.unwrap_or(2.0 * epsilon / f64::from(*steps)),
                    random_start: *random_start,
                };
                pgd(oracle, x, y, &params, loss, rng).map(drop)
            }
            AttackMethod::Ddn { steps, gamma, init_radius } => {
                ddn(oracle, x, y, &DdnParams { steps: *steps, gamma: *gamma, init_radius: *init_radius }, loss)
            }
            AttackMethod::Fmn { norm, steps, gamma, alpha } => {
                fmn(oracle, x, y, &FmnParams { norm: *norm, steps: *steps, gamma: *gamma, alpha: *alpha }, loss)
            }
            AttackMethod::EpsSearch { inner, eps_hi, tolerance } => {
                eps_binary_search(oracle, x, y, inner, *eps_hi, *tolerance, loss).map(drop)
            }
        }
    }
}

/// Result of one attack on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub record: PerturbationRecord,
    pub clean_correct: bool,
    /// Forward plus backward passes spent on the sample.
    pub total_queries: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub attack: String,
    pub norm: Norm,
    pub samples: Vec<SampleOutcome>,
}

impl AttackOutcome {
    pub fn total_queries(&self) -> u64 {
        self.samples.iter().map(|s| s.total_queries).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &PerturbationRecord> {
        self.samples.iter().map(|s| &s.record)
    }
}

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `config` against every sample of `tracker`. Running out of budget on a
/// sample just ends that sample; any other error aborts the attack.
pub fn run_attack(config: &AttackConfig, tracker: &mut TrackedModel<'_>, seed: u64) -> Result<AttackOutcome> {
    config.validate()?;
    if config.norm() != tracker.norm() {
        return Err(AttackError::InvalidConfig(format!(
            "{} is an {} attack but the tracker measures {}",
            config.name,
            config.norm(),
            tracker.norm()
        )));
    }
    config.loss().check_classes(tracker.model().class_count())?;
    for id in tracker.sample_ids() {
        if !tracker.clean_correct(id)? {
            continue;
        }
        let (x, y) = tracker.reference(id).map(|(x, y)| (x.to_vec(), y))?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, config.seed), id));
        let mut oracle = TrackedSample::new(tracker, id);
        match config.attack_sample(&mut oracle, &x, y, &mut rng) {
            Ok(()) | Err(AttackError::BudgetExhausted) => {}
            Err(e) => return Err(e),
        }
    }
    let samples = tracker
        .sample_ids()
        .into_iter()
        .map(|id| {
            Ok(SampleOutcome {
                record: tracker.record(id)?.clone(),
                clean_correct: tracker.clean_correct(id)?,
                total_queries: tracker.ledger(id)?.used(),
            })
        })
        .collect::<Result<Vec<_>, TrackerError>>()?;
    Ok(AttackOutcome { attack: config.name.clone(), norm: tracker.norm(), samples })
}
