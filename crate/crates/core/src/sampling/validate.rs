//! Randomized comparison of the Monte-Carlo samplers against enumeration.
//!
//! Model `m` is a Chimera subgraph of `min_nodes..=max_nodes` nodes with
//! `min_free..=max_free` of them free and the rest clamped to random bits.
//! Its randomness comes from `derive_seed(seed, [m])`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    anneal_sample, exact_distribution, gibbs_sample, total_variation, AnnealConfig, ClampSet, EnergyModel,
    GibbsConfig, SamplingError,
};
use crate::chimera::ChimeraGraph;
use crate::rng::{derive_seed, rng_from};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub models: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub min_free: usize,
    pub max_free: usize,
    pub bias_sd: f64,
    pub coupling_sd: f64,
    /// Kept samples per sampler and model.
    pub samples: usize,
    pub chains: usize,
    pub burn_in: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            models: 20,
            min_nodes: 8,
            max_nodes: 16,
            min_free: 4,
            max_free: 8,
            bias_sd: 2.0,
            coupling_sd: 0.25,
            samples: 100_000,
            chains: 10,
            burn_in: 100,
            tolerance: 0.02,
            seed: 1,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.models == 0 {
            return Err(SamplingError::ZeroCount("models"));
        }
        if self.chains == 0 || self.samples < self.chains {
            return Err(SamplingError::ZeroCount("samples per chain"));
        }
        if self.min_free == 0 || self.min_free > self.max_free || self.min_nodes > self.max_nodes {
            return Err(SamplingError::ZeroCount("free nodes"));
        }
        if self.max_free > self.min_nodes || self.max_nodes > 2 * crate::chimera::CELL_SIZE {
            return Err(SamplingError::LengthMismatch {
                what: "oracle node range",
                found: self.max_nodes,
                expected: 2 * crate::chimera::CELL_SIZE,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub model: usize,
    pub nodes: usize,
    pub free: usize,
    /// TV of i.i.d. draws from the exact table: the estimator noise floor.
    pub tv_exact: f64,
    pub tv_gibbs: f64,
    pub tv_anneal: f64,
}

pub const ORACLE_HEADER: &str = "model,nodes,free,tv_exact,tv_gibbs,tv_anneal\n";

pub fn oracle_model(cfg: &OracleConfig, m: usize) -> Result<(EnergyModel, ClampSet), SamplingError> {
    let mut rng = rng_from(derive_seed(cfg.seed, &[m as u64]));
    let nodes = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
    let free = rng.random_range(cfg.min_free..=cfg.max_free.min(nodes));
    let graph = ChimeraGraph::build(1, 2)
        .and_then(|g| g.hidden_subgraph(nodes))
        .expect("subgraph of two cells");
    let bias = Normal::new(0.0, cfg.bias_sd).map_err(|_| SamplingError::NonFinite("bias_sd"))?;
    let coupling = Normal::new(0.0, cfg.coupling_sd).map_err(|_| SamplingError::NonFinite("coupling_sd"))?;
    let biases = (0..nodes).map(|_| bias.sample(&mut rng)).collect();
    let weights = (0..graph.edge_count()).map(|_| coupling.sample(&mut rng)).collect();
    let model = EnergyModel::on_graph(&graph, biases, weights)?;
    let clamped = rand::seq::index::sample(&mut rng, nodes, nodes - free).into_vec();
    let clamps = ClampSet::from_pairs(clamped.into_iter().map(|i| (i, f64::from(rng.random::<bool>()))));
    Ok((model, clamps))
}

/// One row per model; each row's TVs are deterministic in `cfg`.
pub fn oracle_suite(cfg: &OracleConfig) -> Result<Vec<OracleRow>, SamplingError> {
    cfg.validate()?;
    (0..cfg.models)
        .map(|m| {
            let (model, clamps) = oracle_model(cfg, m)?;
            let exact = exact_distribution(&model, &clamps)?;
            let seed = derive_seed(cfg.seed, &[m as u64, 1]);
            let draws = exact.draw(cfg.samples, seed)?;
            let gibbs = gibbs_sample(
                &model,
                &clamps,
                &GibbsConfig {
                    sweeps: cfg.samples / cfg.chains,
                    chains: cfg.chains,
                    burn_in: cfg.burn_in,
                },
                seed,
            )?;
            let anneal = anneal_sample(
                &model,
                &clamps,
                &AnnealConfig {
                    schedule: vec![1.0],
                    reads: cfg.samples,
                },
                seed,
            )?;
            Ok(OracleRow {
                model: m,
                nodes: model.node_count(),
                free: exact.free_nodes().len(),
                tv_exact: total_variation(&draws.histogram(), exact.probs()),
                tv_gibbs: total_variation(&gibbs.histogram(), exact.probs()),
                tv_anneal: total_variation(&anneal.histogram(), exact.probs()),
            })
        })
        .collect()
}
