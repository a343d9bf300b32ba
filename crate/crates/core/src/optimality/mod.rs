//! Robustness curves, the ensemble lower envelope, optimality scores and the
//! leaderboard.
//!
//! Every score is recomputed from stored per-sample distance vectors in a
//! fixed order (models and attacks by identifier, distances ascending), so
//! adding attacks one at a time gives bitwise the same result as scoring the
//! whole set at once.

mod curve;
mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::norm::Norm;

pub use curve::{asr, RobustnessCurve};
pub use store::{AttackResult, EnvelopePoint, EnvelopeStore, ModelSamples};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimalityError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no attacks registered for model {model} under {norm}")]
    EmptyEnsemble { model: String, norm: Norm },
    #[error("attack {attack} is missing results for models {missing:?}")]
    IncompleteCoverage { attack: String, missing: Vec<String> },
}

pub type Result<T, E = OptimalityError> = std::result::Result<T, E>;

pub const GLOBAL: &str = "global";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityScore {
    pub attack: String,
    /// Model identifier, or [`GLOBAL`] for the zoo average.
    pub model: String,
    pub norm: Norm,
    pub value: f64,
    /// Integration cap; absent for global scores, whose models may differ.
    pub eps_max: Option<f64>,
    /// Median queries to the best perturbation over broken, clean-correct samples.
    pub median_queries: Option<f64>,
}

/// `1 - (A_attack - A_env) / (A_worst - A_env)`, clamped to `[0, 1]`, where
/// `A_worst` is the area of a curve that never succeeds. Defined as 1 when
/// the envelope itself never succeeds.
pub fn local_optimality(attack: &RobustnessCurve, envelope: &RobustnessCurve) -> Result<f64> {
    if !attack.comparable(envelope) {
        return Err(OptimalityError::InvalidInput(format!(
            "curves differ in model, norm, eps_max or samples ({} vs {})",
            attack.model(),
            envelope.model()
        )));
    }
    let worst =
        RobustnessCurve::no_success(envelope.model(), envelope.norm(), envelope.clean_correct(), envelope.eps_max())?;
    let (a_att, a_env, a_worst) = (attack.area(), envelope.area(), worst.area());
    if a_worst <= a_env {
        return Ok(1.0);
    }
    Ok((1.0 - (a_att - a_env) / (a_worst - a_env)).clamp(0.0, 1.0))
}

/// Unweighted mean of one attack's local scores over `zoo`, summed in
/// identifier order.
pub fn global_optimality(attack: &str, norm: Norm, locals: &[OptimalityScore], zoo: &[String]) -> Result<f64> {
    let mut by_model = BTreeMap::new();
    for s in locals {
        if s.attack != attack || s.norm != norm {
            return Err(OptimalityError::InvalidInput(format!(
                "score for {}/{} mixed into {attack}/{norm}",
                s.attack, s.norm
            )));
        }
        if by_model.insert(s.model.as_str(), s.value).is_some() {
            return Err(OptimalityError::InvalidInput(format!("duplicate score for model {}", s.model)));
        }
    }
    let missing: Vec<String> = zoo.iter().filter(|m| !by_model.contains_key(m.as_str())).cloned().collect();
    if !missing.is_empty() {
        return Err(OptimalityError::IncompleteCoverage { attack: attack.into(), missing });
    }
    if zoo.is_empty() {
        return Err(OptimalityError::InvalidInput("empty zoo".into()));
    }
    let mut ids: Vec<&String> = zoo.iter().collect();
    ids.sort();
    ids.dedup();
    let sum: f64 = ids.iter().map(|m| by_model[m.as_str()]).sum();
    Ok(sum / ids.len() as f64)
}

/// Median of `values`, averaging the two middle elements for even counts.
pub fn median(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] as f64 } else { (v[mid - 1] as f64 + v[mid] as f64) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub attack: String,
    pub norm: Norm,
    pub global_optimality: f64,
    pub local: BTreeMap<String, f64>,
    pub median_queries: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompleteAttack {
    pub attack: String,
    pub norm: Norm,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Leaderboard {
    pub groups: BTreeMap<Norm, Vec<LeaderboardEntry>>,
    /// Attacks left unranked because they did not cover the whole zoo.
    pub incomplete: Vec<IncompleteAttack>,
}

/// Groups entries by norm and orders each group by global optimality
/// (descending), then median queries (ascending, missing last), then
/// identifier. Ranks are reassigned from 1.
pub fn rank(entries: impl IntoIterator<Item = LeaderboardEntry>) -> BTreeMap<Norm, Vec<LeaderboardEntry>> {
    let mut groups: BTreeMap<Norm, Vec<LeaderboardEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry(e.norm).or_default().push(e);
    }
    for group in groups.values_mut() {
        group.sort_by(|a, b| {
            b.global_optimality
                .total_cmp(&a.global_optimality)
                .then_with(|| {
                    let qa = a.median_queries.unwrap_or(f64::INFINITY);
                    let qb = b.median_queries.unwrap_or(f64::INFINITY);
                    qa.total_cmp(&qb)
                })
                .then_with(|| a.attack.cmp(&b.attack))
        });
        for (i, e) in group.iter_mut().enumerate() {
            e.rank = i + 1;
        }
    }
    groups
}
