use rand::Rng;

use super::{ClampSet, EnergyModel, SampleBatch, SampleSource, SamplingError, MAX_EXACT_NODES};
use crate::rng::rng_from;

/// Boltzmann probabilities of every free-node configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    free_nodes: Vec<usize>,
    /// Indexed by configuration; bit `k` is the value of `free_nodes[k]`.
    probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn state(&self, index: usize) -> Vec<u8> {
        (0..self.free_nodes.len())
            .map(|k| ((index >> k) & 1) as u8)
            .collect()
    }

    /// Exact `<s_k>` for each free node.
    pub fn marginals(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.free_nodes.len()];
        for (idx, p) in self.probs.iter().enumerate() {
            for (k, mk) in m.iter_mut().enumerate() {
                if (idx >> k) & 1 == 1 {
                    *mk += p;
                }
            }
        }
        m
    }

    /// Exact `<s_a s_b>` over free-node positions.
    pub fn pair_moment(&self, a: usize, b: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(idx, _)| (idx >> a) & 1 == 1 && (idx >> b) & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }

    /// Independent draws from the table (inverse CDF).
    pub fn draw(&self, n: usize, seed: u64) -> Result<SampleBatch, SamplingError> {
        let mut rng = rng_from(seed);
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let states = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let idx = cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1);
                self.state(idx)
            })
            .collect();
        SampleBatch::new(self.free_nodes.clone(), states, SampleSource::Exact)
    }
}

/// Enumerates all `2^free` states with clamped values substituted.
pub fn exact_distribution(model: &EnergyModel, clamps: &ClampSet) -> Result<ExactDistribution, SamplingError> {
    let (free, mut state) = clamps.layout(model.node_count())?;
    if free.len() > MAX_EXACT_NODES {
        return Err(SamplingError::TooManyFreeNodes(free.len()));
    }
    let count = 1usize << free.len();
    let mut log_weights = Vec::with_capacity(count);
    for idx in 0..count {
        for (k, &node) in free.iter().enumerate() {
            state[node] = ((idx >> k) & 1) as f64;
        }
        log_weights.push(-model.energy(&state));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    Ok(ExactDistribution {
        free_nodes: free,
        probs,
    })
}

/// Half the L1 distance between two tables over the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions over different supports");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
