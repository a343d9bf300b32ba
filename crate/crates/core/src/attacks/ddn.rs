//! Decoupled direction and norm (DDN-style) ℓ2 minimum-norm attack.

use super::{Oracle, Result};
use crate::autodiff::{argmax, LossKind};
use crate::norm::{apply, clip_to_box, Norm};

#[derive(Debug, Clone, PartialEq)]
pub struct DdnParams {
    pub steps: u32,
    /// Multiplicative radius adjustment in (0, 1).
    pub gamma: f64,
    pub init_radius: f64,
}

/// Each step takes a unit gradient step on the loss direction, then rescales
/// the perturbation onto the sphere of the current radius. The radius shrinks
/// by `1 - gamma` after an adversarial iterate and grows by `1 + gamma`
/// otherwise. Two passes per step.
pub fn ddn(oracle: &mut impl Oracle, x: &[f64], y: usize, params: &DdnParams, loss: LossKind) -> Result<()> {
    let d = x.len();
    // no point in a radius beyond the box diagonal
    let max_radius = (d as f64).sqrt();
    let mut delta = vec![0.0; d];
    let mut radius = params.init_radius.min(max_radius);
    for t in 0..params.steps {
        let point = apply(x, &delta);
        let adversarial = argmax(&oracle.forward(&point)?) != y;
        let g = oracle.gradient(&point, loss)?;

        let alpha = 1.0 / f64::from(t + 1).sqrt();
        let g_len = Norm::L2.length(&g);
        if g_len > 0.0 {
            delta.iter_mut().zip(&g).for_each(|(dl, gi)| *dl -= alpha * gi / g_len);
        }

        radius =
            if adversarial { radius * (1.0 - params.gamma) } else { (radius * (1.0 + params.gamma)).min(max_radius) };

        let len = Norm::L2.length(&delta);
        if len > 0.0 {
            let scale = radius / len;
            delta.iter_mut().for_each(|dl| *dl *= scale);
        }
        clip_to_box(&mut delta, x);
    }
    Ok(())
}
