use rand::Rng;

use super::cell::{backward, readout, unroll, CellKind, RnnWeights, B_OUT, W_OUT};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

const INIT_STREAM: u64 = 0x1417;
const DROPOUT_STREAM: u64 = 0xd209;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
pub const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RnnSpec {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Inverted-dropout rate on the final hidden state, training only.
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl RnnSpec {
    pub fn new(cell: CellKind, input_dim: usize) -> Self {
        Self {
            cell,
            input_dim,
            hidden_dim: 32,
            dropout: 0.2,
            learning_rate: 0.01,
            epochs: 150,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument(
                "RNN dimensions must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        // Zero is accepted so that a run can be checked to leave weights untouched.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be non-negative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One supervised example: `window` rows of features and the next-day target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: Vec<Vec<f64>>,
    pub target: f64,
}

/// Per-feature z-score and target z-score fitted on the training slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub feature_shift: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_shift: f64,
    pub target_scale: f64,
}

fn shift_scale(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    let sd = if n > 1.0 {
        (m2 / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let scale = if sd > 1e-12 * mean.abs().max(1.0) {
        sd
    } else {
        1.0
    };
    (mean, scale)
}

impl Normalization {
    pub fn identity(input_dim: usize) -> Self {
        Self {
            feature_shift: vec![0.0; input_dim],
            feature_scale: vec![1.0; input_dim],
            target_shift: 0.0,
            target_scale: 1.0,
        }
    }

    pub fn fit(samples: &[Sample], input_dim: usize) -> Self {
        let mut feature_shift = Vec::with_capacity(input_dim);
        let mut feature_scale = Vec::with_capacity(input_dim);
        for j in 0..input_dim {
            let (s, c) = shift_scale(
                samples
                    .iter()
                    .flat_map(|s| s.window.iter().map(move |row| row[j])),
            );
            feature_shift.push(s);
            feature_scale.push(c);
        }
        let (target_shift, target_scale) = shift_scale(samples.iter().map(|s| s.target));
        Self {
            feature_shift,
            feature_scale,
            target_shift,
            target_scale,
        }
    }

    pub fn apply_window(&self, window: &[Vec<f64>]) -> Vec<Vec<f64>> {
        window
            .iter()
            .map(|row| {
                row.iter()
                    .zip(self.feature_shift.iter().zip(&self.feature_scale))
                    .map(|(x, (s, c))| (x - s) / c)
                    .collect()
            })
            .collect()
    }

    pub fn apply_target(&self, y: f64) -> f64 {
        (y - self.target_shift) / self.target_scale
    }

    pub fn invert_target(&self, z: f64) -> f64 {
        z * self.target_scale + self.target_shift
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    pub spec: RnnSpec,
    pub weights: RnnWeights,
    pub normalization: Normalization,
    /// Full-batch training loss (normalized units) before each update.
    pub loss_history: Vec<f64>,
}

fn check_window(window: &[Vec<f64>], input_dim: usize) -> Result<()> {
    if window.is_empty() {
        return Err(Error::Shape("empty input window".into()));
    }
    if let Some(row) = window.iter().find(|r| r.len() != input_dim) {
        return Err(Error::Shape(format!(
            "window row has {} features, model expects {input_dim}",
            row.len()
        )));
    }
    Ok(())
}

/// Normalize, unroll from a zero state, read out and map back to price units.
pub fn predict(model: &RnnModel, window: &[Vec<f64>]) -> Result<f64> {
    check_window(window, model.spec.input_dim)?;
    let z = model.normalization.apply_window(window);
    let (h, _) = unroll(&model.weights, &z);
    Ok(model
        .normalization
        .invert_target(readout(&model.weights, &h)))
}

/// Mean-squared error over `samples` (already normalized) and its gradient.
/// `masks[s]`, when given, multiplies the final hidden state of sample `s`.
pub(crate) fn loss_and_gradient(
    weights: &RnnWeights,
    samples: &[(Vec<Vec<f64>>, f64)],
    masks: Option<&[Vec<f64>]>,
) -> (f64, RnnWeights) {
    let mut grad = weights.zeros_like();
    let mut loss = 0.0;
    let scale = 1.0 / samples.len() as f64;
    for (s, (window, target)) in samples.iter().enumerate() {
        let (mut h, caches) = unroll(weights, window);
        if let Some(masks) = masks {
            h.iter_mut().zip(&masks[s]).for_each(|(v, m)| *v *= m);
        }
        let y = readout(weights, &h);
        let err = y - target;
        loss += err * err * scale;
        let dy = 2.0 * err * scale;
        grad.t_mut(B_OUT)[0] += dy;
        for (g, hj) in grad.t_mut(W_OUT).iter_mut().zip(&h) {
            *g += dy * hj;
        }
        let mut dh: Vec<f64> = weights.t(W_OUT).iter().map(|w| w * dy).collect();
        if let Some(masks) = masks {
            dh.iter_mut().zip(&masks[s]).for_each(|(v, m)| *v *= m);
        }
        backward(weights, &caches, dh, &mut grad);
    }
    (loss, grad)
}

pub(crate) fn loss(weights: &RnnWeights, samples: &[(Vec<Vec<f64>>, f64)]) -> f64 {
    let scale = 1.0 / samples.len() as f64;
    samples
        .iter()
        .map(|(window, target)| {
            let (h, _) = unroll(weights, window);
            (readout(weights, &h) - target).powi(2) * scale
        })
        .sum()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, weights: &mut RnnWeights, grad: &RnnWeights, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (((w, g), m), v) in weights
            .values_mut()
            .zip(grad.values())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

fn clip_global_norm(grad: &mut RnnWeights, max_norm: f64) {
    let norm = grad.values().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.values_mut().for_each(|g| *g *= s);
    }
}

pub fn initial_weights(spec: &RnnSpec) -> RnnWeights {
    RnnWeights::init(
        spec.cell,
        spec.input_dim,
        spec.hidden_dim,
        derive_seed(spec.seed, INIT_STREAM, 0),
    )
}

pub fn train(spec: &RnnSpec, samples: &[Sample]) -> Result<RnnModel> {
    train_from(spec, samples, None)
}

/// Full-batch Adam on mean-squared error with backpropagation through time.
/// `warm_start` replaces the seeded initialization when given.
pub fn train_from(
    spec: &RnnSpec,
    samples: &[Sample],
    warm_start: Option<&RnnWeights>,
) -> Result<RnnModel> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientData(
            "training needs at least one sample".into(),
        ));
    }
    for s in samples {
        check_window(&s.window, spec.input_dim)?;
        if !s.target.is_finite() {
            return Err(Error::Domain("non-finite training target".into()));
        }
    }
    let mut weights = match warm_start {
        Some(w) => {
            if w.cell != spec.cell
                || w.input_dim != spec.input_dim
                || w.hidden_dim != spec.hidden_dim
            {
                return Err(Error::Shape(
                    "warm-start weights do not match the spec".into(),
                ));
            }
            w.clone()
        }
        None => initial_weights(spec),
    };
    let normalization = Normalization::fit(samples, spec.input_dim);
    let data: Vec<(Vec<Vec<f64>>, f64)> = samples
        .iter()
        .map(|s| {
            (
                normalization.apply_window(&s.window),
                normalization.apply_target(s.target),
            )
        })
        .collect();

    let mut adam = Adam::new(weights.param_count());
    let mut dropout_rng = rng_from_seed(derive_seed(spec.seed, DROPOUT_STREAM, 0));
    let keep = 1.0 - spec.dropout;
    let mut loss_history = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let masks: Option<Vec<Vec<f64>>> = (spec.dropout > 0.0).then(|| {
            (0..data.len())
                .map(|_| {
                    (0..spec.hidden_dim)
                        .map(|_| {
                            if dropout_rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        });
        let (loss, mut grad) = loss_and_gradient(&weights, &data, masks.as_deref());
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch: epoch + 1 });
        }
        loss_history.push(loss);
        clip_global_norm(&mut grad, CLIP_NORM);
        adam.update(&mut weights, &grad, spec.learning_rate);
        if !weights.is_finite() {
            return Err(Error::TrainingDiverged { epoch: epoch + 1 });
        }
    }
    Ok(RnnModel {
        spec: *spec,
        weights,
        normalization,
        loss_history,
    })
}

/// Training-set MSE of a model in normalized units, without dropout.
pub fn training_loss(model: &RnnModel, samples: &[Sample]) -> f64 {
    let data: Vec<(Vec<Vec<f64>>, f64)> = samples
        .iter()
        .map(|s| {
            (
                model.normalization.apply_window(&s.window),
                model.normalization.apply_target(s.target),
            )
        })
        .collect();
    loss(&model.weights, &data)
}
