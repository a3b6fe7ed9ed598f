//! Restricted and "limited" Boltzmann machines over the augmented MNIST
//! encoding.
//!
//! An [`RbmModel`] is bipartite: visible units (784 pixels followed by 10
//! label units) connect to every hidden unit and nothing else. An
//! [`LbmModel`] additionally couples hidden units along the edges of a
//! Chimera graph, so the hidden layer no longer factorizes given the visible
//! layer and its statistics have to come from a sampler.

mod checkpoint;
mod eval;
mod train;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chimera::{ChimeraError, ChimeraGraph};
use crate::data::{DataError, AUGMENTED_LEN};
use crate::rng::rng_from;
use crate::sampling::{sigmoid, EnergyModel, SamplingError};

pub use checkpoint::{Checkpoint, GraphSpec, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use eval::{
    classify, classify_pixels, evaluate_accuracy, label_probabilities, reconstruction_error,
    reconstruction_error_rows, ClassifyOptions,
};
pub use train::{
    augmented_matrix, cd_gradients, cd_step, lbm_step, metrics_csv, rbm_sampler_step, train, BatchStats,
    EpochMetrics, Gradients, TrainConfig, METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum BoltzmannError {
    #[error("hidden layer size must be at least 1")]
    NoHidden,
    #[error("an LBM needs a Chimera graph for its hidden layer")]
    MissingGraph,
    #[error("an RBM takes no hidden graph")]
    UnexpectedGraph,
    #[error(transparent)]
    Graph(#[from] ChimeraError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("sampler failed during {phase}: {source}")]
    Sampler {
        phase: &'static str,
        #[source]
        source: SamplingError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rbm,
    Lbm,
}

/// Bipartite visible/hidden parameters. `weights` is `visible x hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmModel {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

impl RbmModel {
    pub fn zeros(visible: usize, hidden: usize) -> Self {
        Self {
            weights: Array2::zeros((visible, hidden)),
            visible_bias: Array1::zeros(visible),
            hidden_bias: Array1::zeros(hidden),
        }
    }

    pub fn visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.visible_bias).chain(&self.hidden_bias).all(|v| v.is_finite())
    }

    /// `b_j + sum_i W_ij v_i` for every hidden unit.
    pub fn hidden_field(&self, v: &[f64]) -> Array1<f64> {
        ArrayView1::from(v).dot(&self.weights) + &self.hidden_bias
    }
}

/// RBM parameters plus hidden-hidden couplings, one per hidden-graph edge.
#[derive(Clone, Debug, PartialEq)]
pub struct LbmModel {
    pub base: RbmModel,
    graph: ChimeraGraph,
    pub couplings: Vec<f64>,
}

impl LbmModel {
    pub fn new(base: RbmModel, graph: ChimeraGraph, couplings: Vec<f64>) -> Result<Self, BoltzmannError> {
        if graph.node_count() != base.hidden() {
            return Err(BoltzmannError::Dimension(format!(
                "hidden graph has {} nodes, model has {} hidden units",
                graph.node_count(),
                base.hidden()
            )));
        }
        if couplings.len() != graph.edge_count() {
            return Err(BoltzmannError::Dimension(format!(
                "{} couplings for {} edges",
                couplings.len(),
                graph.edge_count()
            )));
        }
        Ok(Self {
            base,
            graph,
            couplings,
        })
    }

    pub fn graph(&self) -> &ChimeraGraph {
        &self.graph
    }

    /// Hidden-layer energy model with the given fields as biases.
    pub fn hidden_model(&self, fields: Vec<f64>) -> Result<EnergyModel, SamplingError> {
        EnergyModel::on_graph(&self.graph, fields, self.couplings.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoltzmannModel {
    Rbm(RbmModel),
    Lbm(LbmModel),
}

impl BoltzmannModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            BoltzmannModel::Rbm(_) => ModelKind::Rbm,
            BoltzmannModel::Lbm(_) => ModelKind::Lbm,
        }
    }

    pub fn base(&self) -> &RbmModel {
        match self {
            BoltzmannModel::Rbm(m) => m,
            BoltzmannModel::Lbm(m) => &m.base,
        }
    }

    pub fn base_mut(&mut self) -> &mut RbmModel {
        match self {
            BoltzmannModel::Rbm(m) => m,
            BoltzmannModel::Lbm(m) => &mut m.base,
        }
    }
}

pub(crate) fn normal_vec(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Weights (and couplings) drawn from `scale * N(0, 1)`, biases zero.
///
/// For an LBM the hidden graph is `graph` restricted to its first `hidden`
/// node ids.
pub fn init_model(
    kind: ModelKind,
    hidden: usize,
    graph: Option<&ChimeraGraph>,
    scale: f64,
    seed: u64,
) -> Result<BoltzmannModel, BoltzmannError> {
    init_model_with_visible(kind, AUGMENTED_LEN, hidden, graph, scale, seed)
}

pub fn init_model_with_visible(
    kind: ModelKind,
    visible: usize,
    hidden: usize,
    graph: Option<&ChimeraGraph>,
    scale: f64,
    seed: u64,
) -> Result<BoltzmannModel, BoltzmannError> {
    if hidden == 0 {
        return Err(BoltzmannError::NoHidden);
    }
    let mut rng = rng_from(seed);
    let weights = Array2::from_shape_vec((visible, hidden), normal_vec(visible * hidden, scale, &mut rng))
        .expect("shape matches length");
    let base = RbmModel {
        weights,
        visible_bias: Array1::zeros(visible),
        hidden_bias: Array1::zeros(hidden),
    };
    match (kind, graph) {
        (ModelKind::Rbm, None) => Ok(BoltzmannModel::Rbm(base)),
        (ModelKind::Rbm, Some(_)) => Err(BoltzmannError::UnexpectedGraph),
        (ModelKind::Lbm, None) => Err(BoltzmannError::MissingGraph),
        (ModelKind::Lbm, Some(g)) => {
            let sub = g.hidden_subgraph(hidden)?;
            let couplings = normal_vec(sub.edge_count(), scale, &mut rng);
            Ok(BoltzmannModel::Lbm(LbmModel::new(base, sub, couplings)?))
        }
    }
}

/// `sigmoid(b_j + sum_i W_ij v_i)`.
pub fn hidden_conditional(model: &RbmModel, v: &[f64]) -> Result<Vec<f64>, BoltzmannError> {
    if v.len() != model.visible() {
        return Err(BoltzmannError::Dimension(format!(
            "visible vector of length {} for {} visible units",
            v.len(),
            model.visible()
        )));
    }
    Ok(model.hidden_field(v).iter().map(|&x| sigmoid(x)).collect())
}

/// `sigmoid(a_i + sum_j W_ij h_j)`.
pub fn visible_conditional(model: &RbmModel, h: &[f64]) -> Result<Vec<f64>, BoltzmannError> {
    if h.len() != model.hidden() {
        return Err(BoltzmannError::Dimension(format!(
            "hidden vector of length {} for {} hidden units",
            h.len(),
            model.hidden()
        )));
    }
    let field = model.weights.dot(&ArrayView1::from(h)) + &model.visible_bias;
    Ok(field.iter().map(|&x| sigmoid(x)).collect())
}

pub(crate) fn sigmoid_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(sigmoid);
}

pub(crate) fn add_row_bias(a: &mut Array2<f64>, bias: &Array1<f64>) {
    for mut row in a.axis_iter_mut(Axis(0)) {
        row += bias;
    }
}

#[cfg(test)]
mod tests;
