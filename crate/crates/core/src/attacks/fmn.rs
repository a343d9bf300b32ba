//! Fast minimum-norm (FMN-style) attack for ℓ1, ℓ2 and ℓ∞.

use super::{Oracle, Result};
use crate::autodiff::{argmax, LossKind};
use crate::norm::{apply, clip_to_box, project_ball, Norm};

#[derive(Debug, Clone, PartialEq)]
pub struct FmnParams {
    pub norm: Norm,
    pub steps: u32,
    /// Initial radius decay; step `t` uses `gamma / sqrt(t + 1)`.
    pub gamma: f64,
    /// Initial gradient step length; step `t` uses `alpha / sqrt(t + 1)`.
    pub alpha: f64,
}

/// Alternates a normalized gradient step toward the decision boundary with an
/// adaptive ε-ball constraint. Adversarial iterates shrink ε (never above the
/// smallest adversarial norm seen), non-adversarial ones grow it. Until the
/// first adversarial iterate, ε is set by linearly extrapolating the loss to
/// zero along the dual-norm gradient. Two passes per step.
pub fn fmn(oracle: &mut impl Oracle, x: &[f64], y: usize, params: &FmnParams, loss: LossKind) -> Result<()> {
    let norm = params.norm;
    let dual = norm.dual().unwrap_or(Norm::LInf);
    let mut delta = vec![0.0; x.len()];
    let mut epsilon = f64::INFINITY;
    let mut best_norm = f64::INFINITY;
    for t in 0..params.steps {
        let point = apply(x, &delta);
        let logits = oracle.forward(&point)?;
        let adversarial = argmax(&logits) != y;
        let g = oracle.gradient(&point, loss)?;

        let schedule = 1.0 / f64::from(t + 1).sqrt();
        let decay = params.gamma * schedule;
        let current = norm.length(&delta);
        if adversarial {
            best_norm = best_norm.min(current);
            epsilon = (epsilon * (1.0 - decay)).min(best_norm);
        } else if best_norm.is_finite() {
            epsilon *= 1.0 + decay;
        } else {
            let value = loss.value(&logits, y)?;
            let g_dual = dual.length(&g);
            if g_dual > 0.0 {
                let extrapolated = current + value.abs() / g_dual;
                // the extrapolation can land exactly on the boundary; keep growing
                epsilon = if epsilon.is_finite() { extrapolated.max(epsilon * (1.0 + decay)) } else { extrapolated };
            }
        }

        let g_len = Norm::L2.length(&g);
        if g_len > 0.0 {
            let alpha = params.alpha * schedule;
            delta.iter_mut().zip(&g).for_each(|(dl, gi)| *dl -= alpha * gi / g_len);
        }
        project_ball(&mut delta, norm, epsilon)?;
        clip_to_box(&mut delta, x);
    }
    Ok(())
}
