//! ℓp distances and projection onto the feasible perturbation set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coordinates whose magnitude exceeds this count toward the ℓ0 distance.
pub const L0_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "l0")]
    L0,
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "linf")]
    LInf,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("projection onto the {0} ball is not supported")]
    UnsupportedNorm(Norm),
    #[error("radius must be finite and non-negative, got {0}")]
    InvalidRadius(f64),
    #[error("perturbation has dimension {delta}, reference has {reference}")]
    DimensionMismatch { delta: usize, reference: usize },
}

impl Norm {
    pub const ALL: [Norm; 4] = [Norm::L0, Norm::L1, Norm::L2, Norm::LInf];

    /// Short tag used in file names: `l0`, `l1`, `l2`, `linf`.
    pub fn tag(self) -> &'static str {
        match self {
            Norm::L0 => "l0",
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::LInf => "linf",
        }
    }

    pub fn length(self, v: &[f64]) -> f64 {
        match self {
            Norm::L0 => v.iter().filter(|x| x.abs() > L0_THRESHOLD).count() as f64,
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        self.length(&diff)
    }

    /// Dual norm `q` with `1/p + 1/q = 1` (undefined for ℓ0).
    pub fn dual(self) -> Option<Norm> {
        match self {
            Norm::L0 => None,
            Norm::L1 => Some(Norm::LInf),
            Norm::L2 => Some(Norm::L2),
            Norm::LInf => Some(Norm::L1),
        }
    }

    /// Default upper end of the budget axis for robustness curves in dimension `d`.
    pub fn default_eps_max(self, d: usize) -> f64 {
        match self {
            Norm::L0 => d as f64,
            Norm::L1 => d as f64 / 4.0,
            Norm::L2 => (d as f64).sqrt() / 2.0,
            Norm::LInf => 0.5,
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l0" | "0" => Ok(Norm::L0),
            "l1" | "1" => Ok(Norm::L1),
            "l2" | "2" => Ok(Norm::L2),
            "linf" | "inf" | "l_inf" => Ok(Norm::LInf),
            other => Err(format!("unknown norm `{other}` (expected l0, l1, l2 or linf)")),
        }
    }
}

/// Clamps each coordinate to `[-x_i, 1 - x_i]` so that `x + delta` lies in
/// `[0, 1]^d` after rounding. Magnitudes never increase.
pub fn clip_to_box(delta: &mut [f64], x: &[f64]) {
    for (d, xi) in delta.iter_mut().zip(x) {
        *d = d.clamp(-xi, 1.0 - xi);
    }
}

/// `x + delta` clamped into the unit box.
pub fn apply(x: &[f64], delta: &[f64]) -> Vec<f64> {
    x.iter().zip(delta).map(|(a, d)| (a + d).clamp(0.0, 1.0)).collect()
}

pub fn in_box(x: &[f64]) -> bool {
    x.iter().all(|v| (0.0..=1.0).contains(v))
}

/// Scales `delta` radially so its ℓ2 length does not exceed `radius`.
fn shrink_l2(delta: &mut [f64], radius: f64) {
    let len = Norm::L2.length(delta);
    if len <= radius {
        return;
    }
    if radius == 0.0 {
        delta.iter_mut().for_each(|d| *d = 0.0);
        return;
    }
    let original = delta.to_vec();
    let mut factor = radius / len;
    loop {
        for (d, o) in delta.iter_mut().zip(&original) {
            *d = o * factor;
        }
        if Norm::L2.length(delta) <= radius {
            return;
        }
        // rounding left the length a few ulps over the radius
        factor = factor.next_down();
    }
}

/// Euclidean projection onto the ℓ1 ball via the sorted-magnitude simplex method.
pub fn project_l1_ball(delta: &mut [f64], radius: f64) {
    if Norm::L1.length(delta) <= radius {
        return;
    }
    if radius == 0.0 {
        delta.iter_mut().for_each(|d| *d = 0.0);
        return;
    }
    let mut mags: Vec<f64> = delta.iter().map(|d| d.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (k + 1) as f64;
        if *m > t {
            theta = t;
        } else {
            break;
        }
    }
    for d in delta.iter_mut() {
        *d = d.signum() * (d.abs() - theta).max(0.0);
    }
    // absorb rounding so the ℓ1 constraint holds exactly
    let mut len = Norm::L1.length(delta);
    while len > radius {
        let scale = (radius / len).next_down();
        delta.iter_mut().for_each(|d| *d *= scale);
        len = Norm::L1.length(delta);
    }
}

/// Pulls `delta` into the ℓp ball of `radius` (no box handling). An infinite
/// radius leaves it untouched.
pub fn project_ball(delta: &mut [f64], norm: Norm, radius: f64) -> Result<(), ProjectionError> {
    if radius.is_nan() || radius < 0.0 {
        return Err(ProjectionError::InvalidRadius(radius));
    }
    if radius.is_infinite() {
        return Ok(());
    }
    match norm {
        Norm::LInf => delta.iter_mut().for_each(|d| *d = d.clamp(-radius, radius)),
        Norm::L2 => shrink_l2(delta, radius),
        Norm::L1 => project_l1_ball(delta, radius),
        Norm::L0 => return Err(ProjectionError::UnsupportedNorm(norm)),
    }
    Ok(())
}

/// Projects a perturbation onto `{δ : ‖δ‖_p ≤ radius, x + δ ∈ [0, 1]^d}` for
/// `p ∈ {2, ∞}`: norm scaling or clipping first, then box clipping. The result
/// is a fixed point of the projection.
pub fn project(delta: &[f64], x: &[f64], norm: Norm, radius: f64) -> Result<Vec<f64>, ProjectionError> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(ProjectionError::InvalidRadius(radius));
    }
    if delta.len() != x.len() {
        return Err(ProjectionError::DimensionMismatch { delta: delta.len(), reference: x.len() });
    }
    let mut out = delta.to_vec();
    match norm {
        Norm::LInf => out.iter_mut().for_each(|d| *d = d.clamp(-radius, radius)),
        Norm::L2 => shrink_l2(&mut out, radius),
        Norm::L0 | Norm::L1 => return Err(ProjectionError::UnsupportedNorm(norm)),
    }
    clip_to_box(&mut out, x);
    Ok(out)
}
