use rand::Rng;

use super::cell::RnnWeights;
use super::train::{initial_weights, loss, loss_and_gradient, RnnSpec, Sample};
use crate::rng::{derive_seed, rng_from_seed};

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms; finite
/// differences cannot resolve relative error there.
pub const RELATIVE_FLOOR: f64 = 1e-6;

const BIAS_STREAM: u64 = 0x6b1a5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub parameters: usize,
    pub passed: bool,
}

/// Compare the analytic gradient with central differences on every weight and
/// bias. The check point is the seeded initialization with biases also drawn
/// at random, so that bias gradients are exercised away from zero.
pub fn gradient_check(spec: &RnnSpec, sample: &Sample, tolerance: f64) -> GradientCheck {
    let mut weights = initial_weights(spec);
    let mut rng = rng_from_seed(derive_seed(spec.seed, BIAS_STREAM, 0));
    let n_cell = match spec.cell {
        super::CellKind::Gru => 6,
        super::CellKind::Lstm => 8,
    };
    for t in weights
        .tensors
        .iter_mut()
        .skip(n_cell)
        .filter(|t| t.cols == 1)
    {
        for v in &mut t.data {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    gradient_check_at(&weights, sample, tolerance)
}

/// Same comparison at explicitly supplied weights. The sample is used as-is,
/// without normalization or dropout.
pub fn gradient_check_at(weights: &RnnWeights, sample: &Sample, tolerance: f64) -> GradientCheck {
    let data = vec![(sample.window.clone(), sample.target)];
    let (_, analytic) = loss_and_gradient(weights, &data, None);
    let mut probe = weights.clone();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut parameters = 0;
    for ti in 0..probe.tensors.len() {
        for k in 0..probe.tensors[ti].data.len() {
            let base = probe.tensors[ti].data[k];
            probe.tensors[ti].data[k] = base + FD_STEP;
            let up = loss(&probe, &data);
            probe.tensors[ti].data[k] = base - FD_STEP;
            let down = loss(&probe, &data);
            probe.tensors[ti].data[k] = base;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.tensors[ti].data[k];
            let diff = (a - numeric).abs();
            max_abs = max_abs.max(diff);
            max_rel = max_rel.max(diff / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR));
            parameters += 1;
        }
    }
    GradientCheck {
        max_relative_error: max_rel,
        max_absolute_error: max_abs,
        parameters,
        passed: max_rel < tolerance,
    }
}
