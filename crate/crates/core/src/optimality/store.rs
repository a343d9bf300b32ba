//! Registry of per-attack distance vectors and the per-sample envelope.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    global_optimality, local_optimality, median, rank, IncompleteAttack, Leaderboard, LeaderboardEntry,
    OptimalityError, OptimalityScore, Result, RobustnessCurve, GLOBAL,
};
use crate::norm::Norm;
use crate::tracker::{PerturbationRecord, SampleId};

/// The evaluated samples of one zoo model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSamples {
    pub sample_ids: Vec<SampleId>,
    pub clean_correct: Vec<bool>,
    pub eps_max: BTreeMap<Norm, f64>,
}

/// One attack's best distances on one model, aligned with the model's
/// `sample_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub attack: String,
    pub model: String,
    pub norm: Norm,
    pub distances: Vec<f64>,
    pub queries_at_best: Vec<u64>,
}

impl AttackResult {
    /// Aligns `records` with `sample_ids`; every id needs exactly one record.
    pub fn from_records(
        attack: &str,
        model: &str,
        norm: Norm,
        sample_ids: &[SampleId],
        records: &[PerturbationRecord],
    ) -> Result<Self> {
        let by_id: BTreeMap<SampleId, &PerturbationRecord> = records.iter().map(|r| (r.sample_id, r)).collect();
        if by_id.len() != records.len() || records.len() != sample_ids.len() {
            return Err(OptimalityError::InvalidInput(format!("{attack} on {model}: records do not match samples")));
        }
        let mut distances = Vec::with_capacity(sample_ids.len());
        let mut queries_at_best = Vec::with_capacity(sample_ids.len());
        for id in sample_ids {
            let r = by_id.get(id).ok_or_else(|| {
                OptimalityError::InvalidInput(format!("{attack} on {model}: no record for sample {id}"))
            })?;
            if r.norm != norm {
                return Err(OptimalityError::InvalidInput(format!("{attack}: record norm {} is not {norm}", r.norm)));
            }
            distances.push(r.best_distance);
            queries_at_best.push(r.queries_at_best);
        }
        Ok(Self { attack: attack.into(), model: model.into(), norm, distances, queries_at_best })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub distance: f64,
    /// Attack that achieved `distance`; the smallest identifier on ties.
    pub attack: String,
}

#[derive(Debug, Clone, Default)]
pub struct EnvelopeStore {
    models: BTreeMap<String, ModelSamples>,
    results: BTreeMap<(Norm, String), BTreeMap<String, AttackResult>>,
    envelopes: BTreeMap<(String, Norm), Vec<EnvelopePoint>>,
}

impl EnvelopeStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a zoo model. Re-registering identical samples is a no-op.
    pub fn register_model(&mut self, id: &str, samples: ModelSamples) -> Result<()> {
        if samples.sample_ids.len() != samples.clean_correct.len() || samples.sample_ids.is_empty() {
            return Err(OptimalityError::InvalidInput(format!(
                "model {id}: sample ids and clean flags differ in length"
            )));
        }
        if let Some((norm, eps)) = samples.eps_max.iter().find(|(_, e)| !(**e > 0.0 && e.is_finite())) {
            return Err(OptimalityError::InvalidInput(format!("model {id}: eps_max for {norm} is {eps}")));
        }
        match self.models.get(id) {
            Some(existing) if *existing == samples => Ok(()),
            Some(_) => {
                Err(OptimalityError::InvalidInput(format!("model {id} registered twice with different samples")))
            }
            None => {
                self.models.insert(id.into(), samples);
                Ok(())
            }
        }
    }

    pub fn models(&self) -> impl Iterator<Item = (&str, &ModelSamples)> {
        self.models.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    /// Registered `(norm, attack)` pairs in canonical order.
    pub fn attacks(&self) -> Vec<(Norm, String)> {
        self.results.keys().cloned().collect()
    }

    pub fn result(&self, attack: &str, model: &str, norm: Norm) -> Option<&AttackResult> {
        self.results.get(&(norm, attack.to_string()))?.get(model)
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    /// Registers one attack result and lowers the envelope where it improves.
    pub fn insert(&mut self, result: AttackResult) -> Result<()> {
        let samples = self
            .models
            .get(&result.model)
            .ok_or_else(|| OptimalityError::InvalidInput(format!("unknown model {}", result.model)))?;
        if !samples.eps_max.contains_key(&result.norm) {
            return Err(OptimalityError::InvalidInput(format!(
                "model {} has no eps_max for {}",
                result.model, result.norm
            )));
        }
        let n = samples.sample_ids.len();
        if result.distances.len() != n || result.queries_at_best.len() != n {
            return Err(OptimalityError::InvalidInput(format!(
                "{} on {}: expected {n} samples, got {}",
                result.attack,
                result.model,
                result.distances.len()
            )));
        }
        if let Some(d) = result.distances.iter().find(|d| d.is_nan() || **d < 0.0) {
            return Err(OptimalityError::InvalidInput(format!("{}: distance {d} is not >= 0", result.attack)));
        }
        let slot = self.results.entry((result.norm, result.attack.clone())).or_default();
        if slot.contains_key(&result.model) {
            return Err(OptimalityError::InvalidInput(format!(
                "{} already has results on {} under {}",
                result.attack, result.model, result.norm
            )));
        }
        let envelope = self
            .envelopes
            .entry((result.model.clone(), result.norm))
            .or_insert_with(|| vec![EnvelopePoint { distance: f64::INFINITY, attack: String::new() }; n]);
        for (point, d) in envelope.iter_mut().zip(&result.distances) {
            let better = *d < point.distance
                || (*d == point.distance && (point.attack.is_empty() || result.attack < point.attack));
            if better {
                *point = EnvelopePoint { distance: *d, attack: result.attack.clone() };
            }
        }
        slot.insert(result.model.clone(), result);
        Ok(())
    }

    pub fn envelope_points(&self, model: &str, norm: Norm) -> Option<&[EnvelopePoint]> {
        self.envelopes.get(&(model.to_string(), norm)).map(Vec::as_slice)
    }

    fn samples(&self, model: &str) -> Result<&ModelSamples> {
        self.models.get(model).ok_or_else(|| OptimalityError::InvalidInput(format!("unknown model {model}")))
    }

    pub fn eps_max(&self, model: &str, norm: Norm) -> Result<f64> {
        self.samples(model)?
            .eps_max
            .get(&norm)
            .copied()
            .ok_or_else(|| OptimalityError::InvalidInput(format!("model {model} has no eps_max for {norm}")))
    }

    pub fn lower_envelope(&self, model: &str, norm: Norm) -> Result<RobustnessCurve> {
        let points = self
            .envelope_points(model, norm)
            .ok_or_else(|| OptimalityError::EmptyEnsemble { model: model.into(), norm })?;
        let samples = self.samples(model)?;
        let distances: Vec<f64> = points.iter().map(|p| p.distance).collect();
        RobustnessCurve::new(model, norm, &distances, &samples.clean_correct, self.eps_max(model, norm)?)
    }

    pub fn attack_curve(&self, attack: &str, model: &str, norm: Norm) -> Result<RobustnessCurve> {
        let samples = self.samples(model)?;
        let result = self
            .result(attack, model, norm)
            .ok_or_else(|| OptimalityError::InvalidInput(format!("no results for {attack} on {model} under {norm}")))?;
        RobustnessCurve::new(model, norm, &result.distances, &samples.clean_correct, self.eps_max(model, norm)?)
    }

    fn best_queries(&self, result: &AttackResult) -> Vec<u64> {
        let clean = &self.models[&result.model].clean_correct;
        result
            .distances
            .iter()
            .zip(&result.queries_at_best)
            .zip(clean)
            .filter(|((d, _), ok)| d.is_finite() && **ok)
            .map(|((_, q), _)| *q)
            .collect()
    }

    pub fn local_optimality(&self, attack: &str, model: &str, norm: Norm) -> Result<OptimalityScore> {
        let curve = self.attack_curve(attack, model, norm)?;
        let value = local_optimality(&curve, &self.lower_envelope(model, norm)?)?;
        let result = self.result(attack, model, norm).expect("curve exists");
        Ok(OptimalityScore {
            attack: attack.into(),
            model: model.into(),
            norm,
            value,
            eps_max: Some(curve.eps_max()),
            median_queries: median(&self.best_queries(result)),
        })
    }

    /// Zoo-average score; every registered model must have results.
    pub fn global_optimality(&self, attack: &str, norm: Norm) -> Result<OptimalityScore> {
        let zoo = self.model_ids();
        let ran: Vec<String> =
            self.results.get(&(norm, attack.to_string())).map(|m| m.keys().cloned().collect()).unwrap_or_default();
        let missing: Vec<String> = zoo.iter().filter(|m| !ran.contains(m)).cloned().collect();
        if !missing.is_empty() {
            return Err(OptimalityError::IncompleteCoverage { attack: attack.into(), missing });
        }
        let locals = zoo.iter().map(|m| self.local_optimality(attack, m, norm)).collect::<Result<Vec<_>>>()?;
        let value = global_optimality(attack, norm, &locals, &zoo)?;
        let pooled: Vec<u64> =
            zoo.iter().flat_map(|m| self.best_queries(&self.results[&(norm, attack.to_string())][m])).collect();
        Ok(OptimalityScore {
            attack: attack.into(),
            model: GLOBAL.into(),
            norm,
            value,
            eps_max: None,
            median_queries: median(&pooled),
        })
    }

    /// Scores every registered attack from the stored distance vectors.
    pub fn leaderboard(&self) -> Result<Leaderboard> {
        let zoo = self.model_ids();
        let mut entries = Vec::new();
        let mut incomplete = Vec::new();
        for (norm, attack) in self.attacks() {
            match self.global_optimality(&attack, norm) {
                Ok(global) => {
                    let local = zoo
                        .iter()
                        .map(|m| Ok((m.clone(), self.local_optimality(&attack, m, norm)?.value)))
                        .collect::<Result<BTreeMap<_, _>>>()?;
                    entries.push(LeaderboardEntry {
                        rank: 0,
                        attack,
                        norm,
                        global_optimality: global.value,
                        local,
                        median_queries: global.median_queries,
                    });
                }
                Err(OptimalityError::IncompleteCoverage { missing, .. }) => {
                    incomplete.push(IncompleteAttack { attack, norm, missing });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Leaderboard { groups: rank(entries), incomplete })
    }

    /// Adds new attack results and rescores everything. Each new attack must
    /// cover the whole zoo; nothing is inserted otherwise.
    pub fn incremental_update(&mut self, results: Vec<AttackResult>) -> Result<Leaderboard> {
        let zoo = self.model_ids();
        let mut covered: BTreeMap<(Norm, &str), Vec<&str>> = BTreeMap::new();
        for r in &results {
            covered.entry((r.norm, r.attack.as_str())).or_default().push(r.model.as_str());
        }
        for ((_, attack), models) in &covered {
            let missing: Vec<String> = zoo.iter().filter(|m| !models.contains(&m.as_str())).cloned().collect();
            if !missing.is_empty() {
                return Err(OptimalityError::IncompleteCoverage { attack: attack.to_string(), missing });
            }
        }
        let mut staged = self.clone();
        for r in results {
            staged.insert(r)?;
        }
        *self = staged;
        self.leaderboard()
    }
}
