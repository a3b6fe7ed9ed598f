//! Samplers for Boltzmann distributions over binary `{0,1}` units.
//!
//! The energy of a state `s` is
//! `E(s) = -sum_i b_i s_i - sum_{(i,j) in edges} w_ij s_i s_j`
//! and states are weighted by `exp(-beta * E(s))`. Three samplers share that
//! model: exhaustive enumeration ([`exact_distribution`]), systematic-scan
//! Gibbs ([`gibbs_sample`]) and simulated annealing over an inverse
//! temperature ladder ([`anneal_sample`]), the latter standing in for
//! annealer reads.

mod chain;
mod exact;
mod validate;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chimera::ChimeraGraph;
use crate::rng::rng_from;

pub use exact::{exact_distribution, total_variation, ExactDistribution};
pub use validate::{oracle_model, oracle_suite, OracleConfig, OracleRow, ORACLE_HEADER};

use chain::Chain;

/// Largest free-node count accepted by exact enumeration.
pub const MAX_EXACT_NODES: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("edge ({0}, {1}) references a node outside the model")]
    EdgeOutOfRange(u32, u32),
    #[error("self-loop on node {0}")]
    SelfLoop(u32),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(u32, u32),
    #[error("{what} has length {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("clamp on node {0} outside the model")]
    ClampOutOfRange(usize),
    #[error("clamp value {0} outside [0, 1]")]
    ClampValue(f64),
    #[error("exact enumeration over {0} free nodes exceeds the limit of {MAX_EXACT_NODES}")]
    TooManyFreeNodes(usize),
    #[error("every node is clamped; nothing to sample")]
    NoFreeNodes,
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("annealing schedule is empty")]
    EmptySchedule,
    #[error("annealing schedule must be strictly increasing with a positive final value")]
    BadSchedule,
    #[error("sample batch is empty")]
    EmptyBatch,
    #[error("pair ({0}, {1}) references a unit outside the batch dimension {2}")]
    UnknownPair(usize, usize, usize),
    #[error("incremental energy {incremental} drifted from recomputed {recomputed}")]
    EnergyDrift { incremental: f64, recomputed: f64 },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Biases and pairwise couplings over an explicit edge set.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    biases: Vec<f64>,
    edges: Vec<(u32, u32)>,
    weights: Vec<f64>,
    adjacency: Vec<Vec<(u32, f64)>>,
}

impl EnergyModel {
    pub fn new(biases: Vec<f64>, edges: Vec<(u32, u32)>, weights: Vec<f64>) -> Result<Self, SamplingError> {
        let n = biases.len();
        if weights.len() != edges.len() {
            return Err(SamplingError::LengthMismatch {
                what: "weights",
                found: weights.len(),
                expected: edges.len(),
            });
        }
        if biases.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(SamplingError::NonFinite("parameter"));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for (&(u, v), &w) in edges.iter().zip(&weights) {
            if u as usize >= n || v as usize >= n {
                return Err(SamplingError::EdgeOutOfRange(u, v));
            }
            if u == v {
                return Err(SamplingError::SelfLoop(u));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(SamplingError::DuplicateEdge(u, v));
            }
            adjacency[u as usize].push((v, w));
            adjacency[v as usize].push((u, w));
        }
        Ok(Self {
            biases,
            edges,
            weights,
            adjacency,
        })
    }

    pub fn on_graph(graph: &ChimeraGraph, biases: Vec<f64>, weights: Vec<f64>) -> Result<Self, SamplingError> {
        if biases.len() != graph.node_count() {
            return Err(SamplingError::LengthMismatch {
                what: "biases",
                found: biases.len(),
                expected: graph.node_count(),
            });
        }
        Self::new(biases, graph.edges().to_vec(), weights)
    }

    /// Same couplings, new biases.
    pub fn with_biases(&self, biases: Vec<f64>) -> Result<Self, SamplingError> {
        if biases.len() != self.biases.len() {
            return Err(SamplingError::LengthMismatch {
                what: "biases",
                found: biases.len(),
                expected: self.biases.len(),
            });
        }
        if biases.iter().any(|v| !v.is_finite()) {
            return Err(SamplingError::NonFinite("bias"));
        }
        Ok(Self {
            biases,
            edges: self.edges.clone(),
            weights: self.weights.clone(),
            adjacency: self.adjacency.clone(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.biases.len()
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn neighbors(&self, i: usize) -> &[(u32, f64)] {
        &self.adjacency[i]
    }

    /// `b_i + sum_j w_ij s_j`.
    #[inline]
    pub fn local_field(&self, i: usize, state: &[f64]) -> f64 {
        self.adjacency[i]
            .iter()
            .fold(self.biases[i], |acc, &(j, w)| acc + w * state[j as usize])
    }

    pub fn energy(&self, state: &[f64]) -> f64 {
        let linear: f64 = self.biases.iter().zip(state).map(|(b, s)| b * s).sum();
        let pair: f64 = self
            .edges
            .iter()
            .zip(&self.weights)
            .map(|(&(u, v), w)| w * state[u as usize] * state[v as usize])
            .sum();
        -linear - pair
    }

    /// Equivalent Ising form over spins `z = 2s - 1`.
    pub fn to_ising(&self) -> IsingModel {
        let mut fields: Vec<f64> = self.biases.iter().map(|b| b / 2.0).collect();
        let mut offset = -self.biases.iter().sum::<f64>() / 2.0;
        let mut couplings = Vec::with_capacity(self.weights.len());
        for (&(u, v), &w) in self.edges.iter().zip(&self.weights) {
            fields[u as usize] += w / 4.0;
            fields[v as usize] += w / 4.0;
            couplings.push(w / 4.0);
            offset -= w / 4.0;
        }
        IsingModel {
            fields,
            edges: self.edges.clone(),
            couplings,
            offset,
        }
    }
}

/// `H(z) = -sum_i h_i z_i - sum_ij J_ij z_i z_j + offset` over `z in {-1,+1}`,
/// numerically equal to the `{0,1}` energy under `s = (1 + z) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingModel {
    pub fields: Vec<f64>,
    pub edges: Vec<(u32, u32)>,
    pub couplings: Vec<f64>,
    pub offset: f64,
}

impl IsingModel {
    pub fn energy(&self, spins: &[i8]) -> f64 {
        let lin: f64 = self.fields.iter().zip(spins).map(|(h, &z)| h * f64::from(z)).sum();
        let pair: f64 = self
            .edges
            .iter()
            .zip(&self.couplings)
            .map(|(&(u, v), j)| j * f64::from(spins[u as usize]) * f64::from(spins[v as usize]))
            .sum();
        self.offset - lin - pair
    }
}

/// Nodes held fixed during sampling. Values are usually 0 or 1; a value in
/// between enters neighboring fields as that real intensity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClampSet {
    values: BTreeMap<usize, f64>,
}

impl ClampSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clamp(mut self, node: usize, value: f64) -> Self {
        self.values.insert(node, value);
        self
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            values: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, node: usize) -> Option<f64> {
        self.values.get(&node).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn validate(&self, n: usize) -> Result<(), SamplingError> {
        for (&node, &v) in &self.values {
            if node >= n {
                return Err(SamplingError::ClampOutOfRange(node));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(SamplingError::ClampValue(v));
            }
        }
        Ok(())
    }

    /// Free node ids in ascending order, and a full-length state with the
    /// clamped values filled in.
    pub(crate) fn layout(&self, n: usize) -> Result<(Vec<usize>, Vec<f64>), SamplingError> {
        self.validate(n)?;
        let mut base = vec![0.0; n];
        let mut free = Vec::with_capacity(n - self.values.len());
        for (i, slot) in base.iter_mut().enumerate() {
            match self.values.get(&i) {
                Some(&v) => *slot = v,
                None => free.push(i),
            }
        }
        Ok((free, base))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Exact,
    Gibbs,
    Anneal,
}

/// Binary states over the free nodes of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    free_nodes: Vec<usize>,
    states: Vec<Vec<u8>>,
    source: SampleSource,
}

impl SampleBatch {
    pub fn new(free_nodes: Vec<usize>, states: Vec<Vec<u8>>, source: SampleSource) -> Result<Self, SamplingError> {
        if states.is_empty() {
            return Err(SamplingError::EmptyBatch);
        }
        let dim = free_nodes.len();
        if let Some(bad) = states.iter().find(|s| s.len() != dim) {
            return Err(SamplingError::LengthMismatch {
                what: "state",
                found: bad.len(),
                expected: dim,
            });
        }
        Ok(Self {
            free_nodes,
            states,
            source,
        })
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    pub fn source(&self) -> SampleSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.free_nodes.len()
    }

    /// Bit `k` of the index is free node `k`; needs `dim <= 63`.
    pub fn state_index(state: &[u8]) -> usize {
        state
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &b)| acc | (usize::from(b) << k))
    }

    /// Empirical frequencies indexed like [`ExactDistribution::probs`].
    pub fn histogram(&self) -> Vec<f64> {
        let mut h = vec![0.0; 1usize << self.dim()];
        for s in &self.states {
            h[Self::state_index(s)] += 1.0;
        }
        let n = self.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsConfig {
    /// Kept sweeps per chain.
    pub sweeps: usize,
    pub chains: usize,
    /// Discarded sweeps before recording.
    pub burn_in: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            sweeps: 10,
            chains: 1,
            burn_in: 5,
        }
    }
}

/// Systematic-scan Gibbs sampling at `beta = 1`.
///
/// Each chain `c` is seeded with `seed ^ c`, draws its site order once, starts
/// from the independent-site distribution of the clamped fields, discards
/// `burn_in` sweeps and records one state per subsequent sweep.
pub fn gibbs_sample(
    model: &EnergyModel,
    clamps: &ClampSet,
    cfg: &GibbsConfig,
    seed: u64,
) -> Result<SampleBatch, SamplingError> {
    if cfg.sweeps == 0 {
        return Err(SamplingError::ZeroCount("sweeps"));
    }
    if cfg.chains == 0 {
        return Err(SamplingError::ZeroCount("chains"));
    }
    let (free, base) = clamps.layout(model.node_count())?;
    if free.is_empty() {
        return Err(SamplingError::NoFreeNodes);
    }
    let run = |c: usize| -> Result<Vec<Vec<u8>>, SamplingError> {
        let mut rng = rng_from(seed ^ c as u64);
        let mut chain = Chain::start(model, &free, base.clone(), 1.0, &mut rng);
        for _ in 0..cfg.burn_in {
            chain.sweep(1.0, &mut rng)?;
        }
        let mut out = Vec::with_capacity(cfg.sweeps);
        for _ in 0..cfg.sweeps {
            chain.sweep(1.0, &mut rng)?;
            out.push(chain.free_state());
        }
        Ok(out)
    };
    let per_chain: Vec<_> = if cfg.chains > 1 {
        (0..cfg.chains).into_par_iter().map(run).collect()
    } else {
        vec![run(0)]
    };
    let mut states = Vec::with_capacity(cfg.chains * cfg.sweeps);
    for chain in per_chain {
        states.extend(chain?);
    }
    SampleBatch::new(free, states, SampleSource::Gibbs)
}

/// Geometric inverse-temperature ladder from `start` to `end`.
pub fn geometric_schedule(start: f64, end: f64, rungs: usize) -> Vec<f64> {
    match rungs {
        0 => Vec::new(),
        1 => vec![end],
        _ => {
            let ratio = (end / start).powf(1.0 / (rungs - 1) as f64);
            let mut v: Vec<f64> = (0..rungs).map(|k| start * ratio.powi(k as i32)).collect();
            v[rungs - 1] = end;
            v
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    /// Strictly increasing inverse temperatures, one sweep each.
    pub schedule: Vec<f64>,
    pub reads: usize,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            schedule: geometric_schedule(0.1, 1.0, 20),
            reads: 10,
        }
    }
}

pub fn validate_schedule(schedule: &[f64]) -> Result<(), SamplingError> {
    let last = *schedule.last().ok_or(SamplingError::EmptySchedule)?;
    let increasing = schedule.windows(2).all(|w| w[1] > w[0]);
    if !increasing || !(last > 0.0) || schedule.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(SamplingError::BadSchedule);
    }
    Ok(())
}

/// Independent simulated-annealing reads; read `r` is seeded with `seed ^ r`
/// and returns its state after the last rung.
pub fn anneal_sample(
    model: &EnergyModel,
    clamps: &ClampSet,
    cfg: &AnnealConfig,
    seed: u64,
) -> Result<SampleBatch, SamplingError> {
    validate_schedule(&cfg.schedule)?;
    if cfg.reads == 0 {
        return Err(SamplingError::ZeroCount("reads"));
    }
    let (free, base) = clamps.layout(model.node_count())?;
    if free.is_empty() {
        return Err(SamplingError::NoFreeNodes);
    }
    let run = |r: usize| -> Result<Vec<u8>, SamplingError> {
        let mut rng = rng_from(seed ^ r as u64);
        let mut chain = Chain::start(model, &free, base.clone(), cfg.schedule[0], &mut rng);
        for &beta in &cfg.schedule {
            chain.sweep(beta, &mut rng)?;
        }
        Ok(chain.free_state())
    };
    let states: Vec<_> = if cfg.reads > 1 {
        (0..cfg.reads).into_par_iter().map(run).collect()
    } else {
        vec![run(0)]
    };
    SampleBatch::new(free, states.into_iter().collect::<Result<_, _>>()?, SampleSource::Anneal)
}

/// First and second empirical moments of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    /// `<s_k>` per batch dimension.
    pub first: Vec<f64>,
    /// `<s_a s_b>` per requested pair, in request order.
    pub second: Vec<f64>,
}

/// `pairs` index batch dimensions (positions in [`SampleBatch::free_nodes`]).
pub fn moments(batch: &SampleBatch, pairs: &[(usize, usize)]) -> Result<Moments, SamplingError> {
    if batch.is_empty() {
        return Err(SamplingError::EmptyBatch);
    }
    let dim = batch.dim();
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= dim || b >= dim) {
        return Err(SamplingError::UnknownPair(a, b, dim));
    }
    let mut first = vec![0u64; dim];
    let mut second = vec![0u64; pairs.len()];
    for s in batch.states() {
        for (acc, &b) in first.iter_mut().zip(s) {
            *acc += u64::from(b);
        }
        for (acc, &(a, b)) in second.iter_mut().zip(pairs) {
            *acc += u64::from(s[a] & s[b]);
        }
    }
    let n = batch.len() as f64;
    Ok(Moments {
        first: first.into_iter().map(|c| c as f64 / n).collect(),
        second: second.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Sampler choice carried by training configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SamplerConfig {
    /// Contrastive divergence with `k` alternating conditional steps; only
    /// meaningful for factorizing (restricted) models.
    Cd { k: usize },
    Gibbs(GibbsConfig),
    Anneal(AnnealConfig),
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::Cd { k: 1 }
    }
}

impl SamplerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerConfig::Cd { .. } => "cd",
            SamplerConfig::Gibbs(_) => "gibbs",
            SamplerConfig::Anneal(_) => "anneal",
        }
    }

    /// Draws a batch with the configured Monte-Carlo sampler. `Cd` falls
    /// back to a single Gibbs sweep per chain.
    pub fn sample(&self, model: &EnergyModel, clamps: &ClampSet, seed: u64) -> Result<SampleBatch, SamplingError> {
        match self {
            SamplerConfig::Cd { k } => gibbs_sample(
                model,
                clamps,
                &GibbsConfig {
                    sweeps: 1,
                    chains: 1,
                    burn_in: k.saturating_sub(1),
                },
                seed,
            ),
            SamplerConfig::Gibbs(cfg) => gibbs_sample(model, clamps, cfg, seed),
            SamplerConfig::Anneal(cfg) => anneal_sample(model, clamps, cfg, seed),
        }
    }
}
