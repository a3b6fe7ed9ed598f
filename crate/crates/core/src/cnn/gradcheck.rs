use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;

use super::{cross_entropy, softmax, Block, CnnModel, BLOCKS};
use crate::data::CLASSES;
use crate::rng::{derive_seed, rng_from};

/// Probes whose perturbed forward passes bring any ReLU input this close to
/// zero are skipped.
pub const KINK_THRESHOLD: f64 = 1e-6;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`
/// so that gradients at the finite-difference noise level do not dominate.
pub const REL_FLOOR: f64 = 1e-7;

/// A scalar loss over a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn loss(&self, x: ArrayView2<f64>, labels: &[u8]) -> f64;
    fn loss_and_grad(&self, x: ArrayView2<f64>, labels: &[u8]) -> (f64, Vec<f64>);

    /// Discrete state that must not change across a probe interval.
    fn pattern(&self, _x: ArrayView2<f64>) -> Vec<u32> {
        Vec::new()
    }

    /// Smallest distance of any nonsmooth input from its kink.
    fn kink_distance(&self, _x: ArrayView2<f64>) -> f64 {
        f64::INFINITY
    }

    /// Index ranges sampled separately so every group is covered.
    fn groups(&self) -> Vec<Range<usize>> {
        vec![0..self.params().len()]
    }
}

impl Differentiable for CnnModel {
    fn params(&self) -> &[f64] {
        CnnModel::params(self)
    }

    fn params_mut(&mut self) -> &mut [f64] {
        CnnModel::params_mut(self)
    }

    fn loss(&self, x: ArrayView2<f64>, labels: &[u8]) -> f64 {
        CnnModel::loss(self, x, labels).expect("checked inputs")
    }

    fn loss_and_grad(&self, x: ArrayView2<f64>, labels: &[u8]) -> (f64, Vec<f64>) {
        CnnModel::loss_and_grad(self, x, labels).expect("checked inputs")
    }

    fn pattern(&self, x: ArrayView2<f64>) -> Vec<u32> {
        self.activation_pattern(x)
    }

    fn kink_distance(&self, x: ArrayView2<f64>) -> f64 {
        self.min_abs_preactivation(x)
    }

    fn groups(&self) -> Vec<Range<usize>> {
        BLOCKS
            .iter()
            .map(|&b: &Block| {
                let off = self.block_offset(b);
                let (r, c) = self.block_dims(b);
                off..off + r * c
            })
            .collect()
    }
}

/// Multinomial logistic regression: `softmax(x W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxRegression {
    inputs: usize,
    /// `W` row-major `inputs x 10`, then `b`.
    params: Vec<f64>,
}

impl SoftmaxRegression {
    pub fn new(inputs: usize, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), (inputs + 1) * CLASSES, "parameter count");
        Self { inputs, params }
    }

    fn probs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let w = ArrayView2::from_shape((self.inputs, CLASSES), &self.params[..self.inputs * CLASSES]).expect("shape");
        let b = ArrayView2::from_shape((1, CLASSES), &self.params[self.inputs * CLASSES..]).expect("shape");
        softmax(&(x.dot(&w) + b))
    }
}

impl Differentiable for SoftmaxRegression {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss(&self, x: ArrayView2<f64>, labels: &[u8]) -> f64 {
        cross_entropy(&self.probs(x), labels)
    }

    fn loss_and_grad(&self, x: ArrayView2<f64>, labels: &[u8]) -> (f64, Vec<f64>) {
        let probs = self.probs(x);
        let loss = cross_entropy(&probs, labels);
        let mut d = probs;
        for (r, &y) in labels.iter().enumerate() {
            d[[r, y as usize]] -= 1.0;
        }
        d /= labels.len() as f64;
        let mut grad: Vec<f64> = x.t().dot(&d).iter().copied().collect();
        grad.extend(d.sum_axis(ndarray::Axis(0)).iter());
        (loss, grad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index with the largest relative error.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Probes discarded by the kink rule.
    pub skipped: usize,
}

/// Compares the analytic gradient with central differences on `samples`
/// parameters (fewer only if the model is smaller) spread over its groups.
pub fn gradient_check<M: Differentiable>(
    model: &mut M,
    x: ArrayView2<f64>,
    labels: &[u8],
    samples: usize,
    seed: u64,
) -> GradCheckReport {
    let (_, grad) = model.loss_and_grad(x, labels);
    let groups = model.groups();
    // Small groups are probed exhaustively; their unused share passes to
    // the larger ones.
    let mut by_len: Vec<usize> = (0..groups.len()).collect();
    by_len.sort_by_key(|&g| groups[g].len());
    let mut quota = vec![0; groups.len()];
    let mut remaining = samples;
    for (k, &g) in by_len.iter().enumerate() {
        quota[g] = groups[g].len().min(remaining.div_ceil(groups.len() - k));
        remaining = remaining.saturating_sub(quota[g]);
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for (g, range) in groups.iter().enumerate() {
        let len = range.len();
        let mut rng = rng_from(derive_seed(seed, &[g as u64]));
        for offset in sample(&mut rng, len, quota[g]).into_iter() {
            let i = range.start + offset;
            let original = model.params()[i];
            model.params_mut()[i] = original + FD_STEP;
            let (plus, plus_pattern, plus_kink) = (model.loss(x, labels), model.pattern(x), model.kink_distance(x));
            model.params_mut()[i] = original - FD_STEP;
            let (minus, minus_pattern, minus_kink) = (model.loss(x, labels), model.pattern(x), model.kink_distance(x));
            model.params_mut()[i] = original;
            if plus_pattern != minus_pattern || plus_kink.min(minus_kink) < KINK_THRESHOLD {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grad[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some(i);
            }
        }
    }
    report
}
