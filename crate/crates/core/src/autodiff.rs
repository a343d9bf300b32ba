//! Dense multilayer perceptrons with exact reverse-mode input gradients.
//!
//! The network structure is fixed (affine layers followed by ReLU or identity),
//! so the backward pass is written out directly against a recorded forward
//! trace instead of going through a general computation graph.

use std::fmt;
use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("loss `{kind}` needs at least 4 classes, got {classes}")]
    UnsupportedLoss { kind: LossKind, classes: usize },
    #[error("degenerate logits: largest and third-largest logits coincide")]
    DegenerateLogits,
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// A finite real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::InvalidInput(format!("non-finite entry {} at index {i}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = AutodiffError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Affine map `activation(W x + b)` with `W` stored row-major (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    /// Builds a layer from nested weight rows, one row per output unit.
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let outputs = weights.len();
        if outputs == 0 {
            return Err(AutodiffError::InvalidInput("layer has no output units".into()));
        }
        let inputs = weights[0].len();
        if inputs == 0 {
            return Err(AutodiffError::InvalidInput("layer has no input units".into()));
        }
        if weights.iter().any(|row| row.len() != inputs) {
            return Err(AutodiffError::InvalidInput("ragged weight matrix".into()));
        }
        if bias.len() != outputs {
            return Err(AutodiffError::InvalidInput(format!(
                "bias has {} entries, layer has {outputs} outputs",
                bias.len()
            )));
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        Self::from_flat(inputs, outputs, flat, bias, activation)
    }

    pub(crate) fn from_flat(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        debug_assert_eq!(weights.len(), inputs * outputs);
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(AutodiffError::InvalidInput("non-finite layer parameter".into()));
        }
        Ok(Self { inputs, outputs, weights, bias, activation })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    pub fn weight_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.inputs)
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi)),
        );
    }
}

/// A small feed-forward classifier `f(x, θ)` producing `class_count` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    class_count: usize,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let last = layers.last().ok_or_else(|| AutodiffError::InvalidInput("model has no layers".into()))?;
        let class_count = last.outputs;
        if class_count < 2 {
            return Err(AutodiffError::InvalidInput(format!("model must have at least 2 classes, got {class_count}")));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(AutodiffError::InvalidInput(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Self { layers, class_count })
    }

    /// Binary linear classifier whose logit difference `z_1 - z_0` equals `w·x + b`.
    pub fn linear_binary(w: &[f64], b: f64) -> Result<Self> {
        let layer = Layer::new(vec![vec![0.0; w.len()], w.to_vec()], vec![0.0, b], Activation::Identity)?;
        Self::new(vec![layer])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Hidden widths followed by the output width, e.g. `[32, 32, 4]`.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::outputs).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(AutodiffError::InvalidInput(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::InvalidInput("non-finite input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine(&current, &mut next);
            if layer.activation == Activation::Relu {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Index of the largest logit; the lowest index wins ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.forward(x).map(|z| argmax(&z))
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&current, &mut z);
            let out = match layer.activation {
                Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
                Activation::Identity => z.clone(),
            };
            inputs.push(std::mem::replace(&mut current, out));
            pre.push(z);
        }
        Ok(Trace { inputs, pre, logits: current })
    }

    /// Propagates `d loss / d logits` back through a recorded trace. Returns the
    /// gradient with respect to the input and, when `params` is given, accumulates
    /// parameter gradients into it.
    pub(crate) fn backward(&self, trace: &Trace, dlogits: &[f64], mut params: Option<&mut ParamGrads>) -> Vec<f64> {
        let mut upstream = dlogits.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                // subgradient of ReLU at 0 is 0
                for (g, z) in upstream.iter_mut().zip(&trace.pre[i]) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let input = &trace.inputs[i];
            if let Some(grads) = params.as_deref_mut() {
                let (dw, db) = &mut grads.layers[i];
                for (r, g) in upstream.iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    db[r] += g;
                    let row = &mut dw[r * layer.inputs..(r + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(w, x)| *w += g * x);
                }
            }
            let mut down = vec![0.0; layer.inputs];
            for (row, g) in layer.weights.chunks_exact(layer.inputs).zip(&upstream) {
                if *g == 0.0 {
                    continue;
                }
                down.iter_mut().zip(row).for_each(|(d, w)| *d += g * w);
            }
            upstream = down;
        }
        upstream
    }

    /// Smallest |pre-activation| over all ReLU units, or +inf without ReLUs.
    pub(crate) fn kink_distance(&self, x: &[f64]) -> Result<f64> {
        let trace = self.trace(x)?;
        Ok(self
            .layers
            .iter()
            .zip(&trace.pre)
            .filter(|(l, _)| l.activation == Activation::Relu)
            .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min))
    }
}

pub(crate) struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub(crate) logits: Vec<f64>,
}

/// Per-layer `(dW, db)` accumulators laid out like the model parameters.
#[derive(Debug, Clone)]
pub(crate) struct ParamGrads {
    pub(crate) layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ParamGrads {
    pub(crate) fn zeros_like(model: &MlpModel) -> Self {
        Self { layers: model.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect() }
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Attack objective `L(x, y)`. Every variant decreases as the true class loses
/// ground, so attacks minimize it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `log softmax(z)_y`, the negated cross-entropy.
    NegCrossEntropy,
    /// `z_y - max_{j != y} z_j`; negative iff misclassified.
    DifferenceOfLogits,
    /// Difference of logits divided by `z_(1) - z_(3)`.
    DifferenceOfLogitsRatio,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::NegCrossEntropy => "neg_cross_entropy",
            LossKind::DifferenceOfLogits => "difference_of_logits",
            LossKind::DifferenceOfLogitsRatio => "difference_of_logits_ratio",
        })
    }
}

fn runner_up(logits: &[f64], y: usize) -> usize {
    let mut best: Option<usize> = None;
    for (j, v) in logits.iter().enumerate() {
        if j != y && best.is_none_or(|b| *v > logits[b]) {
            best = Some(j);
        }
    }
    best.expect("at least two classes")
}

/// Indices of the three largest logits, descending; lower index first on ties.
fn top_three(logits: &[f64]) -> [usize; 3] {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    [order[0], order[1], order[2]]
}

impl LossKind {
    pub fn check_classes(self, classes: usize) -> Result<()> {
        if self == LossKind::DifferenceOfLogitsRatio && classes < 4 {
            return Err(AutodiffError::UnsupportedLoss { kind: self, classes });
        }
        Ok(())
    }

    fn validate(self, logits: &[f64], y: usize) -> Result<()> {
        if logits.len() < 2 {
            return Err(AutodiffError::InvalidInput("need at least 2 logits".into()));
        }
        if y >= logits.len() {
            return Err(AutodiffError::InvalidInput(format!("label {y} out of range for {} classes", logits.len())));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::InvalidInput("non-finite logits".into()));
        }
        self.check_classes(logits.len())
    }

    pub fn value(self, logits: &[f64], y: usize) -> Result<f64> {
        self.value_and_gradient(logits, y).map(|(v, _)| v)
    }

    /// Loss value together with its gradient with respect to the logits.
    pub fn value_and_gradient(self, logits: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        self.validate(logits, y)?;
        let mut grad = vec![0.0; logits.len()];
        let value = match self {
            LossKind::NegCrossEntropy => {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
                let log_norm = max + sum.ln();
                for (g, z) in grad.iter_mut().zip(logits) {
                    *g = -(z - log_norm).exp();
                }
                grad[y] += 1.0;
                logits[y] - log_norm
            }
            LossKind::DifferenceOfLogits => {
                let r = runner_up(logits, y);
                grad[y] = 1.0;
                grad[r] = -1.0;
                logits[y] - logits[r]
            }
            LossKind::DifferenceOfLogitsRatio => {
                let r = runner_up(logits, y);
                let [first, _, third] = top_three(logits);
                let spread = logits[first] - logits[third];
                if spread == 0.0 {
                    return Err(AutodiffError::DegenerateLogits);
                }
                let margin = logits[y] - logits[r];
                grad[y] += 1.0 / spread;
                grad[r] -= 1.0 / spread;
                let scale = margin / (spread * spread);
                grad[first] -= scale;
                grad[third] += scale;
                margin / spread
            }
        };
        Ok((value, grad))
    }
}

pub fn loss_value(logits: &[f64], y: usize, kind: LossKind) -> Result<f64> {
    kind.value(logits, y)
}

/// Loss at `x` and its exact gradient with respect to `x`.
pub fn loss_and_input_gradient(model: &MlpModel, x: &[f64], y: usize, kind: LossKind) -> Result<(f64, Vec<f64>)> {
    let trace = model.trace(x)?;
    let (value, dlogits) = kind.value_and_gradient(&trace.logits, y)?;
    Ok((value, model.backward(&trace, &dlogits, None)))
}

pub fn input_gradient(model: &MlpModel, x: &[f64], y: usize, kind: LossKind) -> Result<Vec<f64>> {
    loss_and_input_gradient(model, x, y, kind).map(|(_, g)| g)
}

const KINK_MARGIN: f64 = 1e-3;
const KINK_RESAMPLES: usize = 64;

/// Maximum over coordinates of `|analytic - central difference| / max(1, |analytic|)`.
///
/// If `x` sits within 1e-3 of a ReLU kink it is jittered (seeded, inside the
/// unit box) until it does not, so the comparison is made where the loss is
/// differentiable.
pub fn gradient_check(model: &MlpModel, x: &[f64], y: usize, kind: LossKind, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(AutodiffError::InvalidInput(format!("step must be positive, got {h}")));
    }
    let mut point = x.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b69_6e6b);
    for _ in 0..KINK_RESAMPLES {
        if model.kink_distance(&point)? >= KINK_MARGIN {
            break;
        }
        point = x.iter().map(|v| (v + rng.gen_range(-0.01..0.01)).clamp(0.0, 1.0)).collect();
    }
    let analytic = input_gradient(model, &point, y, kind)?;
    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let up = kind.value(&model.forward(&probe)?, y)?;
        probe[i] = point[i] - h;
        let down = kind.value(&model.forward(&probe)?, y)?;
        probe[i] = point[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((analytic[i] - numeric).abs() / analytic[i].abs().max(1.0));
    }
    Ok(worst)
}

/// Seeded He-uniform initialization for a ReLU MLP with the given widths.
pub fn init_mlp(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<MlpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = vec![input_dim];
    widths.extend_from_slice(hidden);
    widths.push(classes);
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let weights = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
            let activation = if i + 2 == widths.len() { Activation::Identity } else { Activation::Relu };
            Layer::from_flat(fan_in, fan_out, weights, vec![0.0; fan_out], activation)
        })
        .collect::<Result<Vec<_>>>()?;
    MlpModel::new(layers)
}
