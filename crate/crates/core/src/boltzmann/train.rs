use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_accuracy, reconstruction_error_rows, ClassifyOptions};
use super::{
    add_row_bias, init_model, normal_vec, sigmoid_inplace, BoltzmannError, BoltzmannModel, LbmModel, ModelKind,
    RbmModel,
};
use crate::chimera::ChimeraGraph;
use crate::data::{augment, Dataset, AUGMENTED_LEN};
use crate::rng::{derive_seed, rng_from, WorkbenchRng};
use crate::sampling::{moments, sigmoid, ClampSet, EnergyModel, SampleBatch, SamplerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    /// Learning rate for visible-hidden weights and both bias vectors.
    pub lr_vh: f64,
    /// Learning rate for hidden-hidden couplings.
    pub lr_hh: f64,
    /// Couplings are redrawn from `init_scale * N(0,1)` on every step of
    /// epochs `1..=randomize_hh_epochs` instead of being learned.
    pub randomize_hh_epochs: usize,
    pub batch_size: usize,
    pub sampler: SamplerConfig,
    pub init_scale: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Samples per image when an LBM classifies.
    pub classify_reads: usize,
    /// Negative phase from free-running sampling of the whole model instead
    /// of reconstruction.
    pub free_phase: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 200,
            epochs: 25,
            lr_vh: 0.1,
            lr_hh: 0.0001,
            randomize_hh_epochs: 3,
            batch_size: 100,
            sampler: SamplerConfig::Cd { k: 1 },
            init_scale: 0.01,
            momentum: 0.0,
            weight_decay: 0.0,
            classify_reads: 256,
            free_phase: false,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BoltzmannError> {
        let bad = |msg: &str| Err(BoltzmannError::Config(msg.to_string()));
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        if !(self.lr_vh >= 0.0 && self.lr_vh.is_finite() && self.lr_hh >= 0.0 && self.lr_hh.is_finite()) {
            return bad("learning rates must be finite and non-negative");
        }
        if self.epochs > 0 && self.randomize_hh_epochs > self.epochs {
            return bad("randomize_hh_epochs exceeds epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0,1) and weight_decay be non-negative");
        }
        if self.classify_reads == 0 {
            return bad("classify_reads must be at least 1");
        }
        if let SamplerConfig::Cd { k: 0 } = self.sampler {
            return Err(BoltzmannError::ZeroK);
        }
        Ok(())
    }

    pub fn classify_options(&self) -> ClassifyOptions {
        ClassifyOptions {
            sampler: self.sampler.clone(),
            reads: self.classify_reads,
        }
    }
}

/// Averaged positive-minus-negative statistics for one minibatch.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    /// Empty for restricted models.
    pub couplings: Vec<f64>,
    /// Sum over the batch of squared input-minus-reconstruction.
    pub reconstruction_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub batch_size: usize,
    pub reconstruction_error: f64,
}

fn check_batch(model: &RbmModel, batch: ArrayView2<f64>) -> Result<(), BoltzmannError> {
    if batch.nrows() == 0 {
        return Err(BoltzmannError::EmptyBatch);
    }
    if batch.ncols() != model.visible() {
        return Err(BoltzmannError::Dimension(format!(
            "batch rows have {} units, model has {} visible units",
            batch.ncols(),
            model.visible()
        )));
    }
    Ok(())
}

fn bernoulli(p: &Array2<f64>, rng: &mut WorkbenchRng) -> Array2<f64> {
    p.mapv(|x| if rng.random::<f64>() < x { 1.0 } else { 0.0 })
}

fn visible_probs(model: &RbmModel, hidden: &Array2<f64>) -> Array2<f64> {
    let mut v = hidden.dot(&model.weights.t());
    add_row_bias(&mut v, &model.visible_bias);
    sigmoid_inplace(&mut v);
    v
}

fn hidden_fields(model: &RbmModel, visible: ArrayView2<f64>) -> Array2<f64> {
    let mut f = visible.dot(&model.weights);
    add_row_bias(&mut f, &model.hidden_bias);
    f
}

fn squared_error(a: ArrayView2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// CD-k statistics: the data phase uses hidden probabilities, each
/// reconstruction step samples binary hiddens and takes visible
/// probabilities.
pub fn cd_gradients(
    model: &RbmModel,
    batch: ArrayView2<f64>,
    k: usize,
    seed: u64,
) -> Result<Gradients, BoltzmannError> {
    check_batch(model, batch)?;
    if k == 0 {
        return Err(BoltzmannError::ZeroK);
    }
    let mut rng = rng_from(seed);
    let mut p0 = hidden_fields(model, batch);
    sigmoid_inplace(&mut p0);
    let mut h = bernoulli(&p0, &mut rng);
    let mut vk = visible_probs(model, &h);
    let mut pk = hidden_fields(model, vk.view());
    sigmoid_inplace(&mut pk);
    let reconstruction_error = squared_error(batch, &vk);
    for _ in 1..k {
        h = bernoulli(&pk, &mut rng);
        vk = visible_probs(model, &h);
        pk = hidden_fields(model, vk.view());
        sigmoid_inplace(&mut pk);
    }
    let b = batch.nrows() as f64;
    Ok(Gradients {
        weights: (batch.t().dot(&p0) - vk.t().dot(&pk)) / b,
        visible_bias: (batch.sum_axis(Axis(0)) - vk.sum_axis(Axis(0))) / b,
        hidden_bias: (p0.sum_axis(Axis(0)) - pk.sum_axis(Axis(0))) / b,
        couplings: Vec::new(),
        reconstruction_error,
    })
}

fn apply_vh(model: &mut RbmModel, g: &Gradients, lr: f64, weight_decay: f64) {
    if weight_decay > 0.0 {
        let decay = model.weights.mapv(|w| w * weight_decay);
        model.weights.scaled_add(-lr, &decay);
    }
    model.weights.scaled_add(lr, &g.weights);
    model.visible_bias.scaled_add(lr, &g.visible_bias);
    model.hidden_bias.scaled_add(lr, &g.hidden_bias);
}

/// One contrastive-divergence update of an RBM.
pub fn cd_step(
    model: &mut RbmModel,
    batch: ArrayView2<f64>,
    lr: f64,
    k: usize,
    seed: u64,
) -> Result<BatchStats, BoltzmannError> {
    let g = cd_gradients(model, batch, k, seed)?;
    apply_vh(model, &g, lr, 0.0);
    Ok(BatchStats {
        batch_size: batch.nrows(),
        reconstruction_error: g.reconstruction_error,
    })
}

/// Sampler output condensed for learning.
pub(crate) struct HiddenEstimate {
    /// Rao-Blackwellized `<h_j>`: the mean over sampled states of
    /// `p(h_j = 1 | h_-j, v)`.
    pub marginals: Vec<f64>,
    /// `<h_u h_v>` on the hidden-graph edges.
    pub pairs: Vec<f64>,
    /// Last sampled state.
    pub last: Vec<u8>,
}

pub(crate) fn estimate_hidden(model: &EnergyModel, batch: &SampleBatch, pairs: &[(usize, usize)]) -> HiddenEstimate {
    let n = model.node_count();
    let mut marginals = vec![0.0; n];
    let mut state = vec![0.0; n];
    for s in batch.states() {
        for (dst, &b) in state.iter_mut().zip(s) {
            *dst = f64::from(b);
        }
        for (j, m) in marginals.iter_mut().enumerate() {
            *m += sigmoid(model.local_field(j, &state));
        }
    }
    let count = batch.len() as f64;
    marginals.iter_mut().for_each(|m| *m /= count);
    let pair_moments = moments(batch, pairs).expect("pairs come from the model's own edges");
    HiddenEstimate {
        marginals,
        pairs: pair_moments.second,
        last: batch.states().last().cloned().expect("non-empty batch"),
    }
}

fn sample_hidden_rows(
    template: &EnergyModel,
    fields: &Array2<f64>,
    pairs: &[(usize, usize)],
    sampler: &SamplerConfig,
    seed: u64,
    phase: &'static str,
) -> Result<Vec<HiddenEstimate>, BoltzmannError> {
    (0..fields.nrows())
        .into_par_iter()
        .map(|r| {
            let model = template
                .with_biases(fields.row(r).to_vec())
                .map_err(|source| BoltzmannError::Sampler { phase, source })?;
            let batch = sampler
                .sample(&model, &ClampSet::new(), derive_seed(seed, &[r as u64]))
                .map_err(|source| BoltzmannError::Sampler { phase, source })?;
            Ok(estimate_hidden(&model, &batch, pairs))
        })
        .collect()
}

fn stack_rows(rows: impl Iterator<Item = Vec<f64>>, ncols: usize) -> Array2<f64> {
    let data: Vec<f64> = rows.flatten().collect();
    let nrows = data.len() / ncols.max(1);
    Array2::from_shape_vec((nrows, ncols), data).expect("rows share a length")
}

/// Sampler-driven statistics for a model whose hidden layer carries the
/// couplings of `template` (none for an RBM).
///
/// Positive phase: hidden samples with the data clamped. Negative phase:
/// visible probabilities reconstructed from the last positive sample, then a
/// second clamped hidden sampling; or, with `free_phase`, samples of the
/// whole model with nothing clamped.
pub(crate) fn sampled_gradients(
    model: &RbmModel,
    template: &EnergyModel,
    batch: ArrayView2<f64>,
    sampler: &SamplerConfig,
    free_phase: bool,
    seed: u64,
) -> Result<Gradients, BoltzmannError> {
    check_batch(model, batch)?;
    let hidden = model.hidden();
    let pairs: Vec<(usize, usize)> = template
        .edges()
        .iter()
        .map(|&(u, v)| (u as usize, v as usize))
        .collect();
    let f0 = hidden_fields(model, batch);
    let pos = sample_hidden_rows(template, &f0, &pairs, sampler, derive_seed(seed, &[0]), "positive phase")?;
    let p0 = stack_rows(pos.iter().map(|e| e.marginals.clone()), hidden);
    let h0 = stack_rows(pos.iter().map(|e| e.last.iter().map(|&b| f64::from(b)).collect()), hidden);
    let v1 = visible_probs(model, &h0);
    let reconstruction_error = squared_error(batch, &v1);
    let b = batch.nrows() as f64;
    let mut pos_pairs = vec![0.0; pairs.len()];
    for e in &pos {
        for (acc, p) in pos_pairs.iter_mut().zip(&e.pairs) {
            *acc += p;
        }
    }

    let (neg_w, neg_v, neg_h, neg_pairs) = if free_phase {
        free_phase_statistics(model, template, sampler, derive_seed(seed, &[2]))?
    } else {
        let f1 = hidden_fields(model, v1.view());
        let neg = sample_hidden_rows(template, &f1, &pairs, sampler, derive_seed(seed, &[1]), "negative phase")?;
        let p1 = stack_rows(neg.iter().map(|e| e.marginals.clone()), hidden);
        let mut neg_pairs = vec![0.0; pairs.len()];
        for e in &neg {
            for (acc, p) in neg_pairs.iter_mut().zip(&e.pairs) {
                *acc += p;
            }
        }
        (v1.t().dot(&p1) / b, v1.sum_axis(Axis(0)) / b, p1.sum_axis(Axis(0)) / b, neg_pairs.iter().map(|p| p / b).collect())
    };

    Ok(Gradients {
        weights: batch.t().dot(&p0) / b - neg_w,
        visible_bias: batch.sum_axis(Axis(0)) / b - neg_v,
        hidden_bias: p0.sum_axis(Axis(0)) / b - neg_h,
        couplings: pos_pairs.iter().zip(&neg_pairs).map(|(p, n)| p / b - n).collect(),
        reconstruction_error,
    })
}

type ModelStatistics = (Array2<f64>, Array1<f64>, Array1<f64>, Vec<f64>);

/// Unclamped samples of the full visible+hidden model.
fn free_phase_statistics(
    model: &RbmModel,
    template: &EnergyModel,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<ModelStatistics, BoltzmannError> {
    let (nv, nh) = (model.visible(), model.hidden());
    let mut biases = model.visible_bias.to_vec();
    biases.extend(model.hidden_bias.iter());
    let mut edges = Vec::with_capacity(nv * nh + template.edges().len());
    let mut weights = Vec::with_capacity(edges.capacity());
    for i in 0..nv {
        for j in 0..nh {
            edges.push((i as u32, (nv + j) as u32));
            weights.push(model.weights[[i, j]]);
        }
    }
    for (&(u, v), &w) in template.edges().iter().zip(template.weights()) {
        edges.push((nv as u32 + u, nv as u32 + v));
        weights.push(w);
    }
    let phase = "free phase";
    let full = EnergyModel::new(biases, edges, weights).map_err(|source| BoltzmannError::Sampler { phase, source })?;
    let batch = sampler
        .sample(&full, &ClampSet::new(), seed)
        .map_err(|source| BoltzmannError::Sampler { phase, source })?;
    let states = stack_rows(
        batch.states().iter().map(|s| s.iter().map(|&b| f64::from(b)).collect()),
        nv + nh,
    );
    let n = states.nrows() as f64;
    let vis = states.slice(s![.., ..nv]);
    let hid = states.slice(s![.., nv..]);
    let pairs: Vec<f64> = template
        .edges()
        .iter()
        .map(|&(u, v)| (hid.column(u as usize).to_owned() * hid.column(v as usize)).sum() / n)
        .collect();
    Ok((vis.t().dot(&hid) / n, vis.sum_axis(Axis(0)) / n, hid.sum_axis(Axis(0)) / n, pairs))
}

fn uncoupled_template(hidden: usize) -> EnergyModel {
    EnergyModel::new(vec![0.0; hidden], Vec::new(), Vec::new()).expect("edgeless model is valid")
}

/// RBM update with statistics from a Monte-Carlo sampler rather than CD.
/// Shares its code path with [`lbm_step`], so an LBM whose couplings stay
/// at zero follows the identical trajectory.
pub fn rbm_sampler_step(
    model: &mut RbmModel,
    batch: ArrayView2<f64>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BatchStats, BoltzmannError> {
    let template = uncoupled_template(model.hidden());
    let g = sampled_gradients(model, &template, batch, &cfg.sampler, cfg.free_phase, seed)?;
    apply_vh(model, &g, cfg.lr_vh, cfg.weight_decay);
    Ok(BatchStats {
        batch_size: batch.nrows(),
        reconstruction_error: g.reconstruction_error,
    })
}

/// One LBM update. During epochs `1..=randomize_hh_epochs` the couplings are
/// redrawn from `init_scale * N(0,1)` instead of following their gradient.
pub fn lbm_step(
    model: &mut LbmModel,
    batch: ArrayView2<f64>,
    cfg: &TrainConfig,
    epoch: usize,
    seed: u64,
) -> Result<BatchStats, BoltzmannError> {
    if epoch == 0 {
        return Err(BoltzmannError::Config("epochs are numbered from 1".into()));
    }
    let template = model
        .hidden_model(vec![0.0; model.base.hidden()])
        .map_err(|source| BoltzmannError::Sampler { phase: "setup", source })?;
    let g = sampled_gradients(&model.base, &template, batch, &cfg.sampler, cfg.free_phase, seed)?;
    apply_vh(&mut model.base, &g, cfg.lr_vh, cfg.weight_decay);
    if epoch <= cfg.randomize_hh_epochs {
        let mut rng = rng_from(derive_seed(seed, &[3]));
        model.couplings = normal_vec(model.couplings.len(), cfg.init_scale, &mut rng);
    } else {
        for (u, d) in model.couplings.iter_mut().zip(&g.couplings) {
            *u += cfg.lr_hh * d;
        }
    }
    Ok(BatchStats {
        batch_size: batch.nrows(),
        reconstruction_error: g.reconstruction_error,
    })
}

/// Rows of augmented vectors (labels visible unless `hide_label`).
pub fn augmented_matrix(ds: &Dataset, hide_label: bool) -> Array2<f64> {
    stack_rows(
        ds.samples().iter().map(|s| augment(s, hide_label).into_inner()),
        AUGMENTED_LEN,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub accuracy: f64,
    pub reconstruction_error: f64,
}

pub const METRICS_HEADER: &str = "# tribench-metrics v1; reconstruction_error = sum over images and all 794 units of (input - reconstruction probability)^2, labels visible\nepoch,accuracy,reconstruction_error\n";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    for m in rows {
        let _ = writeln!(out, "{},{:.6},{:.6}", m.epoch, m.accuracy, m.reconstruction_error);
    }
    out
}

/// Momentum buffers; absent when momentum is zero.
struct Velocity {
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
}

fn step(
    model: &mut BoltzmannModel,
    batch: ArrayView2<f64>,
    cfg: &TrainConfig,
    epoch: usize,
    seed: u64,
    velocity: &mut Option<Velocity>,
) -> Result<BatchStats, BoltzmannError> {
    let Some(vel) = velocity else {
        return match (model, &cfg.sampler) {
            (BoltzmannModel::Rbm(m), SamplerConfig::Cd { k }) if !cfg.free_phase => {
                let g = cd_gradients(m, batch, *k, seed)?;
                apply_vh(m, &g, cfg.lr_vh, cfg.weight_decay);
                Ok(BatchStats {
                    batch_size: batch.nrows(),
                    reconstruction_error: g.reconstruction_error,
                })
            }
            (BoltzmannModel::Rbm(m), _) => rbm_sampler_step(m, batch, cfg, seed),
            (BoltzmannModel::Lbm(m), _) => lbm_step(m, batch, cfg, epoch, seed),
        };
    };
    // Momentum path: the same statistics, smoothed before application.
    let g = match model {
        BoltzmannModel::Rbm(m) => match &cfg.sampler {
            SamplerConfig::Cd { k } if !cfg.free_phase => cd_gradients(m, batch, *k, seed)?,
            _ => sampled_gradients(m, &uncoupled_template(m.hidden()), batch, &cfg.sampler, cfg.free_phase, seed)?,
        },
        BoltzmannModel::Lbm(m) => {
            let template = m
                .hidden_model(vec![0.0; m.base.hidden()])
                .map_err(|source| BoltzmannError::Sampler { phase: "setup", source })?;
            sampled_gradients(&m.base, &template, batch, &cfg.sampler, cfg.free_phase, seed)?
        }
    };
    vel.weights = &vel.weights * cfg.momentum + &g.weights;
    vel.visible_bias = &vel.visible_bias * cfg.momentum + &g.visible_bias;
    vel.hidden_bias = &vel.hidden_bias * cfg.momentum + &g.hidden_bias;
    let smoothed = Gradients {
        weights: vel.weights.clone(),
        visible_bias: vel.visible_bias.clone(),
        hidden_bias: vel.hidden_bias.clone(),
        couplings: Vec::new(),
        reconstruction_error: g.reconstruction_error,
    };
    apply_vh(model.base_mut(), &smoothed, cfg.lr_vh, cfg.weight_decay);
    if let BoltzmannModel::Lbm(m) = model {
        if epoch <= cfg.randomize_hh_epochs {
            let mut rng = rng_from(derive_seed(seed, &[3]));
            m.couplings = normal_vec(m.couplings.len(), cfg.init_scale, &mut rng);
        } else {
            for (u, d) in m.couplings.iter_mut().zip(&g.couplings) {
                *u += cfg.lr_hh * d;
            }
        }
    }
    Ok(BatchStats {
        batch_size: batch.nrows(),
        reconstruction_error: g.reconstruction_error,
    })
}

/// Trains from a fresh initialization, reporting after every epoch.
///
/// Each epoch visits the training set in a seeded random order, then
/// measures classification accuracy on `eval` and the reconstruction error
/// summed over the whole training set.
pub fn train(
    kind: ModelKind,
    train_ds: &Dataset,
    eval_ds: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&BoltzmannModel, &EpochMetrics) -> Result<(), BoltzmannError>,
) -> Result<(BoltzmannModel, Vec<EpochMetrics>), BoltzmannError> {
    cfg.validate()?;
    let graph = match kind {
        ModelKind::Rbm => None,
        ModelKind::Lbm => Some(ChimeraGraph::for_hidden_size(cfg.hidden)?),
    };
    let mut model = init_model(kind, cfg.hidden, graph.as_ref(), cfg.init_scale, derive_seed(cfg.seed, &[0]))?;
    let data = augmented_matrix(train_ds, false);
    let mut velocity = (cfg.momentum > 0.0).then(|| Velocity {
        weights: Array2::zeros(model.base().weights.raw_dim()),
        visible_bias: Array1::zeros(model.base().visible()),
        hidden_bias: Array1::zeros(model.base().hidden()),
    });
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let opts = cfg.classify_options();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, &[1, epoch as u64])));
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select(Axis(0), chunk);
            step(
                &mut model,
                batch.view(),
                cfg,
                epoch,
                derive_seed(cfg.seed, &[2, epoch as u64, b as u64]),
                &mut velocity,
            )?;
        }
        if !model.base().is_finite() {
            return Err(BoltzmannError::Config(format!("parameters diverged in epoch {epoch}")));
        }
        let accuracy = evaluate_accuracy(&model, eval_ds, &opts, derive_seed(cfg.seed, &[3, epoch as u64]))?;
        let reconstruction_error =
            reconstruction_error_rows(&model, data.view(), &opts, derive_seed(cfg.seed, &[4, epoch as u64]))?;
        let metrics = EpochMetrics {
            epoch,
            accuracy,
            reconstruction_error,
        };
        on_epoch(&model, &metrics)?;
        history.push(metrics);
    }
    Ok((model, history))
}
