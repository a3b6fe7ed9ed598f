use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BoltzmannError, BoltzmannModel, LbmModel, ModelKind, RbmModel};
use crate::chimera::ChimeraGraph;

pub const CHECKPOINT_FORMAT: &str = "tribench-boltzmann";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Prefix of a `rows x cols` Chimera grid holding the first `nodes` ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub rows: usize,
    pub cols: usize,
    pub nodes: usize,
}

/// Serialized model. `weights` is row-major `visible x hidden`; `couplings`
/// follow the sorted edge order of the hidden graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub visible: usize,
    pub hidden: usize,
    pub graph: Option<GraphSpec>,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub weights: Vec<f64>,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub couplings: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &BoltzmannModel, epoch: usize, seed: u64, config_hash: &str) -> Self {
        let base = model.base();
        let (graph, couplings) = match model {
            BoltzmannModel::Rbm(_) => (None, Vec::new()),
            BoltzmannModel::Lbm(m) => (
                Some(GraphSpec {
                    rows: m.graph().rows(),
                    cols: m.graph().cols(),
                    nodes: m.graph().node_count(),
                }),
                m.couplings.clone(),
            ),
        };
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind: model.kind(),
            visible: base.visible(),
            hidden: base.hidden(),
            graph,
            epoch,
            seed,
            config_hash: config_hash.to_string(),
            weights: base.weights.iter().copied().collect(),
            visible_bias: base.visible_bias.to_vec(),
            hidden_bias: base.hidden_bias.to_vec(),
            couplings,
        }
    }

    pub fn to_model(&self) -> Result<BoltzmannModel, BoltzmannError> {
        let bad = |msg: String| BoltzmannError::Checkpoint(msg);
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported format {} v{}", self.format, self.version)));
        }
        let weights = Array2::from_shape_vec((self.visible, self.hidden), self.weights.clone())
            .map_err(|_| bad(format!("{} weights for {}x{}", self.weights.len(), self.visible, self.hidden)))?;
        if self.visible_bias.len() != self.visible || self.hidden_bias.len() != self.hidden {
            return Err(bad("bias lengths do not match dimensions".into()));
        }
        let base = RbmModel {
            weights,
            visible_bias: Array1::from(self.visible_bias.clone()),
            hidden_bias: Array1::from(self.hidden_bias.clone()),
        };
        if !base.is_finite() || self.couplings.iter().any(|u| !u.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        match (self.kind, self.graph) {
            (ModelKind::Rbm, None) if self.couplings.is_empty() => Ok(BoltzmannModel::Rbm(base)),
            (ModelKind::Lbm, Some(g)) => {
                let graph = ChimeraGraph::build(g.rows, g.cols)?.hidden_subgraph(g.nodes)?;
                Ok(BoltzmannModel::Lbm(LbmModel::new(base, graph, self.couplings.clone())?))
            }
            _ => Err(bad("graph presence does not match model kind".into())),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint fields serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, BoltzmannError> {
        serde_json::from_str(text).map_err(|e| BoltzmannError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), BoltzmannError> {
        std::fs::write(path, self.to_json()).map_err(|e| BoltzmannError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, BoltzmannError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BoltzmannError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
