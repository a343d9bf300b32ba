//! Query-budgeted model wrapper with automatic best-perturbation capture.
//!
//! Every forward and backward pass issued through a [`TrackedModel`] is
//! charged against the sample's own ledger. Each forward pass is also checked
//! as a candidate adversarial example: if it is misclassified, inside the box
//! and closer to the reference input than the current best, it replaces the
//! stored record. Attacks therefore never need to report their own result.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::autodiff::{argmax, input_gradient, AutodiffError, LossKind, MlpModel, Vector};
use crate::norm::{in_box, Norm};

pub type SampleId = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown sample id {0}")]
    UnknownSample(SampleId),
    #[error("query budget exhausted for sample {0}")]
    BudgetExhausted(SampleId),
    #[error(transparent)]
    Model(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Forward,
    Backward,
}

/// Forward and backward pass counts against a budget on their sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryLedger {
    forward_count: u64,
    backward_count: u64,
    budget: u64,
}

impl QueryLedger {
    pub fn new(budget: u64) -> Self {
        Self { forward_count: 0, backward_count: 0, budget }
    }

    pub fn forward_count(&self) -> u64 {
        self.forward_count
    }

    pub fn backward_count(&self) -> u64 {
        self.backward_count
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn used(&self) -> u64 {
        self.forward_count + self.backward_count
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.used()
    }

    pub fn is_exhausted(&self) -> bool {
        self.used() >= self.budget
    }

    fn charge(&mut self, pass: Pass) {
        debug_assert!(!self.is_exhausted());
        match pass {
            Pass::Forward => self.forward_count += 1,
            Pass::Backward => self.backward_count += 1,
        }
    }
}

/// Best successful perturbation seen so far for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRecord {
    pub sample_id: SampleId,
    pub norm: Norm,
    /// `‖best_delta‖_p`, or +inf while no adversarial example is known.
    pub best_distance: f64,
    pub best_delta: Option<Vector>,
    /// Ledger usage (forward + backward) when the best was captured.
    pub queries_at_best: u64,
    pub succeeded: bool,
}

impl PerturbationRecord {
    pub fn unbroken(sample_id: SampleId, norm: Norm) -> Self {
        Self { sample_id, norm, best_distance: f64::INFINITY, best_delta: None, queries_at_best: 0, succeeded: false }
    }
}

#[derive(Debug, Clone)]
struct SampleState {
    x: Vec<f64>,
    y: usize,
    clean_correct: bool,
    ledger: QueryLedger,
    record: PerturbationRecord,
}

/// A candidate submitted through [`TrackedModel::forward`], kept when history is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub sample_id: SampleId,
    pub candidate: Vec<f64>,
}

pub struct TrackedModel<'m> {
    model: &'m MlpModel,
    norm: Norm,
    budget: u64,
    samples: BTreeMap<SampleId, SampleState>,
    history: Option<Vec<Submission>>,
}

impl<'m> TrackedModel<'m> {
    /// Wraps `model` for the given reference samples `(id, x, y)`.
    ///
    /// Samples the clean model already misclassifies start with a zero
    /// perturbation at distance 0.
    pub fn wrap<'a, I>(model: &'m MlpModel, samples: I, norm: Norm, budget: u64) -> Result<Self, TrackerError>
    where
        I: IntoIterator<Item = (SampleId, &'a [f64], usize)>,
    {
        if budget == 0 {
            return Err(TrackerError::InvalidInput("query budget must be at least 1".into()));
        }
        let mut states = BTreeMap::new();
        for (id, x, y) in samples {
            if !in_box(x) {
                return Err(TrackerError::InvalidInput(format!("sample {id} lies outside [0, 1]^d")));
            }
            if y >= model.class_count() {
                return Err(TrackerError::InvalidInput(format!("sample {id} has label {y} out of range")));
            }
            let clean_correct = model.predict(x)? == y;
            let record = if clean_correct {
                PerturbationRecord::unbroken(id, norm)
            } else {
                PerturbationRecord {
                    sample_id: id,
                    norm,
                    best_distance: 0.0,
                    best_delta: Some(Vector::zeros(x.len())),
                    queries_at_best: 0,
                    succeeded: true,
                }
            };
            let state = SampleState { x: x.to_vec(), y, clean_correct, ledger: QueryLedger::new(budget), record };
            if states.insert(id, state).is_some() {
                return Err(TrackerError::InvalidInput(format!("duplicate sample id {id}")));
            }
        }
        Ok(Self { model, norm, budget, samples: states, history: None })
    }

    /// Keeps every submitted candidate for later inspection.
    pub fn with_history(mut self) -> Self {
        self.history = Some(Vec::new());
        self
    }

    pub fn history(&self) -> &[Submission] {
        self.history.as_deref().unwrap_or(&[])
    }

    pub fn model(&self) -> &'m MlpModel {
        self.model
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn sample_ids(&self) -> Vec<SampleId> {
        self.samples.keys().copied().collect()
    }

    fn state(&self, id: SampleId) -> Result<&SampleState, TrackerError> {
        self.samples.get(&id).ok_or(TrackerError::UnknownSample(id))
    }

    /// Reference input and label of a sample.
    pub fn reference(&self, id: SampleId) -> Result<(&[f64], usize), TrackerError> {
        self.state(id).map(|s| (s.x.as_slice(), s.y))
    }

    pub fn clean_correct(&self, id: SampleId) -> Result<bool, TrackerError> {
        self.state(id).map(|s| s.clean_correct)
    }

    pub fn ledger(&self, id: SampleId) -> Result<QueryLedger, TrackerError> {
        self.state(id).map(|s| s.ledger)
    }

    pub fn record(&self, id: SampleId) -> Result<&PerturbationRecord, TrackerError> {
        self.state(id).map(|s| &s.record)
    }

    fn open(&mut self, id: SampleId, x: &[f64]) -> Result<(), TrackerError> {
        let dim = self.model.input_dim();
        let state = self.samples.get(&id).ok_or(TrackerError::UnknownSample(id))?;
        if state.ledger.is_exhausted() {
            return Err(TrackerError::BudgetExhausted(id));
        }
        if x.len() != dim {
            return Err(TrackerError::InvalidInput(format!("candidate has dimension {}, expected {dim}", x.len())));
        }
        Ok(())
    }

    /// One counted forward pass on `candidate`; updates the best record when
    /// the candidate is an in-box adversarial example closer than the current best.
    pub fn forward(&mut self, id: SampleId, candidate: &[f64]) -> Result<Vec<f64>, TrackerError> {
        self.open(id, candidate)?;
        let logits = self.model.forward(candidate)?;
        let model = self.model;
        let norm = self.norm;
        if let Some(h) = self.history.as_mut() {
            h.push(Submission { sample_id: id, candidate: candidate.to_vec() });
        }
        let state = self.samples.get_mut(&id).expect("checked in open");
        state.ledger.charge(Pass::Forward);
        if argmax(&logits) != state.y && in_box(candidate) {
            let delta: Vec<f64> = candidate.iter().zip(&state.x).map(|(c, x)| c - x).collect();
            let distance = norm.length(&delta);
            if distance < state.record.best_distance {
                // x + (x' - x) can differ from x' in the last bit; the stored
                // delta must reproduce an adversarial point on its own
                let rebuilt: Vec<f64> = state.x.iter().zip(&delta).map(|(x, d)| x + d).collect();
                let sound = rebuilt == candidate || (in_box(&rebuilt) && model.predict(&rebuilt)? != state.y);
                if sound {
                    state.record = PerturbationRecord {
                        sample_id: id,
                        norm,
                        best_distance: distance,
                        best_delta: Some(Vector::new(delta)?),
                        queries_at_best: state.ledger.used(),
                        succeeded: true,
                    };
                }
            }
        }
        Ok(logits)
    }

    /// One counted backward pass: the input gradient of `kind` at `point` for
    /// the sample's true label. Never touches the record.
    pub fn backward(&mut self, id: SampleId, point: &[f64], kind: LossKind) -> Result<Vec<f64>, TrackerError> {
        self.open(id, point)?;
        let state = self.samples.get_mut(&id).expect("checked in open");
        let grad = input_gradient(self.model, point, state.y, kind)?;
        state.ledger.charge(Pass::Backward);
        Ok(grad)
    }

    /// Snapshot of all records in sample-id order.
    pub fn best_records(&self) -> Vec<PerturbationRecord> {
        self.samples.values().map(|s| s.record.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> MlpModel {
        // class 1 iff x0 + x1 > 1
        MlpModel::linear_binary(&[1.0, 1.0], -1.0).unwrap()
    }

    #[test]
    fn initial_records() {
        let m = model();
        let a = [0.8, 0.8];
        let b = [0.2, 0.2];
        let tm = TrackedModel::wrap(&m, [(0, &a[..], 1), (1, &b[..], 1)], Norm::L2, 10).unwrap();
        let fresh = tm.record(0).unwrap();
        assert!(!fresh.succeeded && fresh.best_distance.is_infinite() && fresh.best_delta.is_none());
        let wrong = tm.record(1).unwrap();
        assert!(wrong.succeeded && wrong.best_distance == 0.0);
        assert_eq!(wrong.best_delta.as_deref(), Some(&[0.0, 0.0][..]));
        assert!(!tm.clean_correct(1).unwrap());
    }

    #[test]
    fn wrap_rejects_bad_inputs() {
        let m = model();
        let a = [0.8, 0.8];
        assert!(TrackedModel::wrap(&m, [(0, &a[..], 1)], Norm::L2, 0).is_err());
        assert!(TrackedModel::wrap(&m, [(0, &a[..], 1), (0, &a[..], 1)], Norm::L2, 5).is_err());
        let out = [1.2, 0.5];
        assert!(TrackedModel::wrap(&m, [(0, &out[..], 1)], Norm::L2, 5).is_err());
    }

    #[test]
    fn running_minimum_and_box() {
        let m = model();
        let x = [0.6, 0.6];
        let mut tm = TrackedModel::wrap(&m, [(7, &x[..], 1)], Norm::LInf, 10).unwrap();
        for d in [0.5, 0.3, 0.4] {
            tm.forward(7, &[x[0] - d, x[1] - d]).unwrap();
        }
        let r = tm.record(7).unwrap();
        assert!((r.best_distance - 0.3).abs() < 1e-12);
        assert_eq!(r.queries_at_best, 2);
        // misclassified but outside the box: counted, never recorded
        tm.forward(7, &[-0.5, 0.1]).unwrap();
        assert!((tm.record(7).unwrap().best_distance - 0.3).abs() < 1e-12);
        assert_eq!(tm.ledger(7).unwrap().forward_count(), 4);
    }

    #[test]
    fn budget_is_enforced() {
        let m = model();
        let x = [0.8, 0.8];
        let mut tm = TrackedModel::wrap(&m, [(0, &x[..], 1)], Norm::L2, 10).unwrap();
        for _ in 0..10 {
            tm.forward(0, &x).unwrap();
        }
        assert_eq!(tm.forward(0, &x), Err(TrackerError::BudgetExhausted(0)));
        assert_eq!(tm.backward(0, &x, LossKind::DifferenceOfLogits), Err(TrackerError::BudgetExhausted(0)));
        assert_eq!(tm.ledger(0).unwrap().used(), 10);
        assert!(!tm.record(0).unwrap().succeeded);
    }

    #[test]
    fn counters() {
        let m = model();
        let x = [0.8, 0.8];
        let mut tm = TrackedModel::wrap(&m, [(0, &x[..], 1)], Norm::L2, 10).unwrap();
        tm.backward(0, &x, LossKind::DifferenceOfLogits).unwrap();
        let l = tm.ledger(0).unwrap();
        assert_eq!((l.forward_count(), l.backward_count()), (0, 1));
        tm.forward(0, &x).unwrap();
        tm.backward(0, &x, LossKind::DifferenceOfLogits).unwrap();
        tm.forward(0, &x).unwrap();
        let l = tm.ledger(0).unwrap();
        assert_eq!((l.forward_count(), l.backward_count()), (2, 2));
        assert_eq!(l.remaining(), 6);
    }

    #[test]
    fn separate_wraps_are_isolated() {
        let m = model();
        let x = [0.8, 0.8];
        let mut a = TrackedModel::wrap(&m, [(0, &x[..], 1)], Norm::L2, 10).unwrap();
        let b = TrackedModel::wrap(&m, [(0, &x[..], 1)], Norm::L2, 10).unwrap();
        a.forward(0, &[0.1, 0.1]).unwrap();
        assert!(a.record(0).unwrap().succeeded);
        assert!(!b.record(0).unwrap().succeeded);
        assert_eq!(b.ledger(0).unwrap().used(), 0);
    }

    #[test]
    fn unknown_sample() {
        let m = model();
        let x = [0.8, 0.8];
        let mut tm = TrackedModel::wrap(&m, [(0, &x[..], 1)], Norm::L2, 10).unwrap();
        assert_eq!(tm.forward(3, &x), Err(TrackerError::UnknownSample(3)));
    }

    #[test]
    fn ties_keep_first_seen() {
        let m = model();
        let x = [0.8, 0.8];
        let mut tm = TrackedModel::wrap(&m, [(0, &x[..], 1)], Norm::LInf, 10).unwrap();
        tm.forward(0, &[0.3, 0.5]).unwrap();
        tm.forward(0, &[0.5, 0.3]).unwrap();
        let r = tm.record(0).unwrap();
        assert_eq!(r.queries_at_best, 1);
    }
}
