//! Fixed-budget attacks: FGSM and PGD.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Oracle, Result};
use crate::autodiff::{argmax, LossKind};
use crate::norm::{apply, project, Norm};

#[derive(Debug, Clone, PartialEq)]
pub struct PgdParams {
    pub norm: Norm,
    pub epsilon: f64,
    pub steps: u32,
    pub step_size: f64,
    pub random_start: bool,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Descent direction of unit `norm`-steepness: `-sign(g)` for ℓ∞, `-g/‖g‖₂` for ℓ2.
fn steepest_descent(g: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::L2 => {
            let len = Norm::L2.length(g);
            if len == 0.0 {
                vec![0.0; g.len()]
            } else {
                g.iter().map(|v| -v / len).collect()
            }
        }
        _ => g.iter().map(|v| -sign(*v)).collect(),
    }
}

/// Single signed-gradient step of size `epsilon`. One backward and one forward
/// pass; returns whether the candidate is misclassified.
pub fn fgsm(oracle: &mut impl Oracle, x: &[f64], y: usize, epsilon: f64, loss: LossKind) -> Result<bool> {
    let g = oracle.gradient(x, loss)?;
    let step: Vec<f64> = steepest_descent(&g, Norm::LInf).iter().map(|d| d * epsilon).collect();
    let delta = project(&step, x, Norm::LInf, epsilon)?;
    let logits = oracle.forward(&apply(x, &delta))?;
    Ok(argmax(&logits) != y)
}

fn random_start(x: &[f64], params: &PgdParams, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let eps = params.epsilon;
    let delta: Vec<f64> = match params.norm {
        Norm::L2 => {
            let dir: Vec<f64> = x.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let len = Norm::L2.length(&dir).max(f64::MIN_POSITIVE);
            let radius = eps * rng.gen::<f64>().powf(1.0 / x.len() as f64);
            dir.iter().map(|d| d / len * radius).collect()
        }
        _ => x.iter().map(|_| if eps > 0.0 { rng.gen_range(-eps..=eps) } else { 0.0 }).collect(),
    };
    Ok(project(&delta, x, params.norm, eps)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdReport {
    /// Whether any iterate was misclassified.
    pub success: bool,
    /// Final perturbation; `x + delta` is the last iterate.
    pub delta: Vec<f64>,
}

/// Projected gradient descent on the loss inside the ε-ball of `params.norm`.
/// Each step costs one backward and one forward pass.
pub fn pgd(
    oracle: &mut impl Oracle,
    x: &[f64],
    y: usize,
    params: &PgdParams,
    loss: LossKind,
    rng: &mut ChaCha8Rng,
) -> Result<PgdReport> {
    let mut delta = if params.random_start { random_start(x, params, rng)? } else { vec![0.0; x.len()] };
    let mut success = false;
    for _ in 0..params.steps {
        let g = oracle.gradient(&apply(x, &delta), loss)?;
        let dir = steepest_descent(&g, params.norm);
        let stepped: Vec<f64> = delta.iter().zip(&dir).map(|(d, s)| d + params.step_size * s).collect();
        delta = project(&stepped, x, params.norm, params.epsilon)?;
        let logits = oracle.forward(&apply(x, &delta))?;
        success |= argmax(&logits) != y;
    }
    Ok(PgdReport { success, delta })
}
