//! Attack success rate and robustness curves over per-sample distances.

use super::{OptimalityError, Result};
use crate::norm::Norm;
use crate::tracker::PerturbationRecord;

/// Fraction of records with a successful perturbation of size at most `epsilon`.
pub fn asr(records: &[PerturbationRecord], epsilon: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(OptimalityError::InvalidInput("asr of an empty record list".into()));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(OptimalityError::InvalidInput(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if let Some(r) = records.iter().find(|r| r.norm != records[0].norm) {
        return Err(OptimalityError::InvalidInput(format!("mixed norms {} and {}", records[0].norm, r.norm)));
    }
    let hits = records.iter().filter(|r| r.succeeded && r.best_distance <= epsilon).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Robust accuracy as a right-continuous step function of ε on `[0, eps_max]`.
///
/// Each sample is stored by its effective distance: 0 for samples the clean
/// model already gets wrong, +inf for unbroken samples and for distances
/// beyond `eps_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCurve {
    model: String,
    norm: Norm,
    eps_max: f64,
    clean_correct: Vec<bool>,
    sorted: Vec<f64>,
}

impl RobustnessCurve {
    /// `distances[i]` and `clean_correct[i]` describe the same sample.
    pub fn new(model: &str, norm: Norm, distances: &[f64], clean_correct: &[bool], eps_max: f64) -> Result<Self> {
        if distances.is_empty() {
            return Err(OptimalityError::InvalidInput("curve over zero samples".into()));
        }
        if distances.len() != clean_correct.len() {
            return Err(OptimalityError::InvalidInput(format!(
                "{} distances but {} clean flags",
                distances.len(),
                clean_correct.len()
            )));
        }
        if !(eps_max > 0.0 && eps_max.is_finite()) {
            return Err(OptimalityError::InvalidInput(format!("eps_max must be positive and finite, got {eps_max}")));
        }
        if let Some(d) = distances.iter().find(|d| d.is_nan() || **d < 0.0) {
            return Err(OptimalityError::InvalidInput(format!("distance {d} is not >= 0")));
        }
        let mut sorted: Vec<f64> = distances
            .iter()
            .zip(clean_correct)
            .map(|(d, ok)| match (ok, *d) {
                (false, _) => 0.0,
                (true, d) if d > eps_max => f64::INFINITY,
                (true, d) => d,
            })
            .collect();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { model: model.into(), norm, eps_max, clean_correct: clean_correct.to_vec(), sorted })
    }

    /// Curve of an attack that never succeeds.
    pub fn no_success(model: &str, norm: Norm, clean_correct: &[bool], eps_max: f64) -> Result<Self> {
        Self::new(model, norm, &vec![f64::INFINITY; clean_correct.len()], clean_correct, eps_max)
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }

    pub fn sample_count(&self) -> usize {
        self.sorted.len()
    }

    pub fn clean_correct(&self) -> &[bool] {
        &self.clean_correct
    }

    pub fn clean_accuracy(&self) -> f64 {
        self.clean_correct.iter().filter(|c| **c).count() as f64 / self.sample_count() as f64
    }

    /// Effective distances in ascending order.
    pub fn distances(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of samples whose effective distance exceeds `epsilon`.
    pub fn robust_accuracy(&self, epsilon: f64) -> f64 {
        let broken = self.sorted.partition_point(|d| *d <= epsilon);
        (self.sample_count() - broken) as f64 / self.sample_count() as f64
    }

    /// `(ε, RA(ε))` at 0 and at every distinct finite distance, i.e. every
    /// point where the curve can change value.
    pub fn step_points(&self) -> Vec<(f64, f64)> {
        let mut points = vec![(0.0, self.robust_accuracy(0.0))];
        for d in self.sorted.iter().filter(|d| d.is_finite() && **d > 0.0) {
            if points.last().map(|p| p.0) != Some(*d) {
                points.push((*d, self.robust_accuracy(*d)));
            }
        }
        points
    }

    /// Exact integral of robust accuracy over `[0, eps_max]`.
    ///
    /// Sample `i` contributes `min(d_i, eps_max)`; terms are summed in sorted
    /// order so equal distance multisets give bitwise-equal areas.
    pub fn area(&self) -> f64 {
        let sum: f64 = self.sorted.iter().map(|d| d.min(self.eps_max)).sum();
        sum / self.sample_count() as f64
    }

    /// Whether `other` covers the same model, norm, ε range and samples.
    pub fn comparable(&self, other: &Self) -> bool {
        self.model == other.model
            && self.norm == other.norm
            && self.eps_max == other.eps_max
            && self.clean_correct == other.clean_correct
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(d: f64) -> PerturbationRecord {
        let mut r = PerturbationRecord::unbroken(0, Norm::L2);
        if d.is_finite() {
            r.best_distance = d;
            r.succeeded = true;
        }
        r
    }

    #[test]
    fn asr_examples() {
        let recs: Vec<_> = [0.1, 0.3, f64::INFINITY, 0.2].into_iter().map(rec).collect();
        assert_eq!(asr(&recs, 0.25).unwrap(), 0.5);
        assert_eq!(asr(&recs, 0.15).unwrap(), 0.25);
        let recs: Vec<_> = [0.0, f64::INFINITY, 0.5, 0.5].into_iter().map(rec).collect();
        assert_eq!(asr(&recs, 0.0).unwrap(), 0.25);
        assert!(asr(&[], 0.1).is_err());
    }

    #[test]
    fn asr_rejects_mixed_norms() {
        let mut other = rec(0.1);
        other.norm = Norm::LInf;
        assert!(asr(&[rec(0.1), other], 0.2).is_err());
    }

    #[test]
    fn curve_by_hand() {
        let inf = f64::INFINITY;
        let c = RobustnessCurve::new("m", Norm::L2, &[0.1, 0.2, inf, inf], &[true; 4], 1.0).unwrap();
        assert_eq!(c.robust_accuracy(0.0), 1.0);
        assert_eq!(c.robust_accuracy(0.15), 0.75);
        assert_eq!(c.robust_accuracy(0.25), 0.5);
        assert_eq!(c.robust_accuracy(1.0), 0.5);
        // right-continuity: the step happens at the distance itself
        assert_eq!(c.robust_accuracy(0.1), 0.75);
        assert_eq!(c.step_points(), vec![(0.0, 1.0), (0.1, 0.75), (0.2, 0.5)]);
    }

    #[test]
    fn clean_misclassified_never_robust() {
        let inf = f64::INFINITY;
        let c = RobustnessCurve::new("m", Norm::L2, &[inf, inf, inf, inf], &[false, true, true, true], 1.0).unwrap();
        assert_eq!(c.robust_accuracy(0.0), 0.75);
        assert_eq!(c.clean_accuracy(), 0.75);
        let all = RobustnessCurve::no_success("m", Norm::L2, &[true; 3], 1.0).unwrap();
        assert_eq!(all.robust_accuracy(0.0), 1.0);
        assert_eq!(all.robust_accuracy(1.0), 1.0);
        assert_eq!(all.area(), 1.0);
    }

    #[test]
    fn distances_beyond_cap_count_as_unbroken() {
        let c = RobustnessCurve::new("m", Norm::LInf, &[0.2, 0.9], &[true, true], 0.5).unwrap();
        assert_eq!(c.distances()[1], f64::INFINITY);
        assert_eq!(c.area(), (0.2 + 0.5) / 2.0);
    }

    #[test]
    fn area_is_exact_step_integral() {
        let env = RobustnessCurve::new("m", Norm::L2, &[0.2, 0.4], &[true, true], 1.0).unwrap();
        assert!((env.area() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn invalid_curves() {
        assert!(RobustnessCurve::new("m", Norm::L2, &[], &[], 1.0).is_err());
        assert!(RobustnessCurve::new("m", Norm::L2, &[0.1], &[true], 0.0).is_err());
        assert!(RobustnessCurve::new("m", Norm::L2, &[-0.1], &[true], 1.0).is_err());
        assert!(RobustnessCurve::new("m", Norm::L2, &[f64::NAN], &[true], 1.0).is_err());
        assert!(RobustnessCurve::new("m", Norm::L2, &[0.1, 0.2], &[true], 1.0).is_err());
    }
}
