use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CnnError, CnnModel, LeNetHyper};
use crate::data::Dataset;
use crate::rng::{derive_seed, rng_from};

/// Rows evaluated per forward pass when scoring.
const EVAL_CHUNK: usize = 250;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Leading images of the training set used; 0 means all.
    pub train_images: usize,
    /// Leading images of the evaluation set used; 0 means all.
    pub eval_images: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.01,
            batch_size: 10,
            train_images: 2000,
            eval_images: 1000,
            seed: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CnnError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(CnnError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch cross-entropy over the epoch.
    pub loss: f64,
    pub accuracy: f64,
}

pub const TRAINING_HEADER: &str = "epoch,loss,accuracy\n";

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub model: CnnModel,
    pub history: Vec<EpochRecord>,
    /// Held-out accuracy after the last epoch.
    pub accuracy: f64,
}

impl FitOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from(TRAINING_HEADER);
        for r in &self.history {
            let _ = writeln!(out, "{},{:.8},{:.6}", r.epoch, r.loss, r.accuracy);
        }
        out
    }
}

fn subset(ds: &Dataset, n: usize) -> Dataset {
    if n == 0 || n >= ds.len() {
        ds.clone()
    } else {
        ds.take(n)
    }
}

fn accuracy(model: &CnnModel, x: &Array2<f64>, labels: &[u8]) -> Result<f64, CnnError> {
    let mut correct = 0;
    for (chunk, ys) in x.axis_chunks_iter(Axis(0), EVAL_CHUNK).zip(labels.chunks(EVAL_CHUNK)) {
        correct += model.predict(chunk)?.iter().zip(ys).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Minibatch SGD on mean softmax cross-entropy. Initialization uses
/// `derive_seed(seed, [0])`; epoch `e` visits the data in the order given by
/// `derive_seed(seed, [1, e])`.
pub fn fit(hyper: LeNetHyper, cfg: &FitConfig, train: &Dataset, eval: &Dataset) -> Result<FitOutcome, CnnError> {
    cfg.validate()?;
    let mut model = CnnModel::build(hyper, derive_seed(cfg.seed, &[0]))?;
    let train = subset(train, cfg.train_images);
    let eval = subset(eval, cfg.eval_images);
    let x = model.image_matrix(train.samples())?;
    let y: Vec<u8> = train.samples().iter().map(|s| s.label()).collect();
    let ex = model.image_matrix(eval.samples())?;
    let ey: Vec<u8> = eval.samples().iter().map(|s| s.label()).collect();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, &[1, epoch as u64])));
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), idx);
            let by: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
            let (loss, grad) = model.loss_and_grad(bx.view(), &by)?;
            if !loss.is_finite() {
                return Err(CnnError::Diverged(epoch));
            }
            model.sgd_update(&grad, cfg.learning_rate);
            total += loss;
            batches += 1;
        }
        history.push(EpochRecord {
            epoch,
            loss: total / batches as f64,
            accuracy: accuracy(&model, &ex, &ey)?,
        });
    }
    let acc = match history.last() {
        Some(r) => r.accuracy,
        None => accuracy(&model, &ex, &ey)?,
    };
    Ok(FitOutcome {
        model,
        history,
        accuracy: acc,
    })
}

/// Held-out accuracy after [`fit`].
pub fn train_and_score(hyper: LeNetHyper, cfg: &FitConfig, train: &Dataset, eval: &Dataset) -> Result<f64, CnnError> {
    Ok(fit(hyper, cfg, train, eval)?.accuracy)
}
