//! Structural evolution of detectors by clone-and-mutate with elitism.
//!
//! Generation `g` draws child `i` from `derive_seed(seed, [g, i])`, so the
//! run is independent of worker count.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detector::{fit_baseline, BinaryTask, Detector};
use super::{random_network, CompiledNet, Neuron, ScanSchedule, SimConfig, SnnError, SnnNetwork, Synapse};
use crate::rng::{derive_seed, rng_from, WorkbenchRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub hidden_min: usize,
    pub hidden_max: usize,
    pub density: f64,
    pub weight_mean: f64,
    pub weight_sd: f64,
    pub max_delay: u32,
    pub threshold_lo: f64,
    pub threshold_hi: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            hidden_min: 5,
            hidden_max: 40,
            density: 0.1,
            weight_mean: 0.0,
            weight_sd: 1.0,
            max_delay: 8,
            threshold_lo: 0.5,
            threshold_hi: 4.0,
        }
    }
}

/// Probability that each operator is applied once to a child.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutationRates {
    pub add_neuron: f64,
    pub remove_neuron: f64,
    pub add_synapse: f64,
    pub remove_synapse: f64,
    pub perturb_weight: f64,
    pub perturb_threshold: f64,
    pub resample_delay: f64,
    pub weight_sd: f64,
    pub threshold_sd: f64,
}

impl Default for MutationRates {
    fn default() -> Self {
        Self {
            add_neuron: 0.05,
            remove_neuron: 0.05,
            add_synapse: 0.3,
            remove_synapse: 0.2,
            perturb_weight: 0.8,
            perturb_threshold: 0.4,
            resample_delay: 0.2,
            weight_sd: 0.5,
            threshold_sd: 0.3,
        }
    }
}

impl MutationRates {
    pub fn none() -> Self {
        Self {
            add_neuron: 0.0,
            remove_neuron: 0.0,
            add_synapse: 0.0,
            remove_synapse: 0.0,
            perturb_weight: 0.0,
            perturb_threshold: 0.0,
            resample_delay: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnnEvoConfig {
    pub population: usize,
    pub generations: usize,
    /// Best individuals copied unchanged into the next generation.
    pub elite: usize,
    /// Parents are drawn uniformly from this top fraction.
    pub parent_fraction: f64,
    pub mutation: MutationRates,
    pub init: InitConfig,
    pub sim: SimConfig,
    /// Threads for fitness evaluation; 0 uses every core.
    pub workers: usize,
    pub seed: u64,
}

impl Default for SnnEvoConfig {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 100,
            elite: 2,
            parent_fraction: 0.2,
            mutation: MutationRates::default(),
            init: InitConfig::default(),
            sim: SimConfig::default(),
            workers: 0,
            seed: 1,
        }
    }
}

impl SnnEvoConfig {
    pub fn validate(&self) -> Result<(), SnnError> {
        let bad = |m: &str| Err(SnnError::Config(m.into()));
        if self.population == 0 {
            return bad("population must be at least 1");
        }
        if self.elite > self.population {
            return bad("elite exceeds population");
        }
        if !(self.parent_fraction > 0.0 && self.parent_fraction <= 1.0) {
            return bad("parent_fraction must be in (0, 1]");
        }
        let i = &self.init;
        if i.hidden_min > i.hidden_max || i.max_delay == 0 || !(0.0..=1.0).contains(&i.density) {
            return bad("init ranges are empty");
        }
        if !(i.threshold_lo > 0.0 && i.threshold_lo <= i.threshold_hi) || !(i.weight_sd >= 0.0) {
            return bad("init thresholds must be positive and ordered");
        }
        let m = &self.mutation;
        let probs = [
            m.add_neuron,
            m.remove_neuron,
            m.add_synapse,
            m.remove_synapse,
            m.perturb_weight,
            m.perturb_threshold,
            m.resample_delay,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || !(m.weight_sd >= 0.0 && m.threshold_sd >= 0.0) {
            return bad("mutation probabilities must lie in [0, 1]");
        }
        self.sim.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnnGenStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub best_so_far: f64,
    pub neurons: usize,
    pub synapses: usize,
}

pub const SNN_GENERATIONS_HEADER: &str = "generation,best,mean,best_so_far,neurons,synapses\n";

#[derive(Clone, Debug, PartialEq)]
pub struct SnnEvoResult {
    pub best: Detector,
    pub fitness: f64,
    /// Fitness of every member of the initial population.
    pub initial: Vec<f64>,
    pub history: Vec<SnnGenStats>,
}

impl SnnEvoResult {
    pub fn generations_csv(&self) -> String {
        let mut out = String::from(SNN_GENERATIONS_HEADER);
        for s in &self.history {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{},{}",
                s.generation, s.best, s.mean, s.best_so_far, s.neurons, s.synapses
            );
        }
        out
    }
}

#[derive(Clone)]
struct Member {
    detector: Detector,
    fitness: f64,
}

fn score(net: SnnNetwork, schedules: &[ScanSchedule], task: &BinaryTask, sim: &SimConfig) -> Member {
    let compiled = CompiledNet::new(&net);
    let counts: Vec<u32> = schedules
        .iter()
        .map(|s| compiled.run(s, sim, false).0.counts[compiled.output()])
        .collect();
    let (baseline, fitness) = fit_baseline(&counts, &task.positive);
    Member {
        detector: Detector { network: net, baseline },
        fitness,
    }
}

fn remove_neuron(net: &mut SnnNetwork, k: usize) {
    net.neurons.remove(k);
    net.synapses.retain(|s| s.pre != k && s.post != k);
    let shift = |i: usize| if i > k { i - 1 } else { i };
    for s in &mut net.synapses {
        s.pre = shift(s.pre);
        s.post = shift(s.post);
    }
    for i in &mut net.inputs {
        *i = shift(*i);
    }
    net.output = shift(net.output);
}

fn random_synapse(pre: usize, post: usize, init: &InitConfig, rng: &mut WorkbenchRng) -> Synapse {
    let normal = Normal::new(init.weight_mean, init.weight_sd).expect("finite weight distribution");
    Synapse {
        pre,
        post,
        weight: normal.sample(rng),
        delay: rng.random_range(1..=init.max_delay),
    }
}

/// Applies each operator with its probability. Thresholds stay positive,
/// so every mutant is valid.
pub(crate) fn mutate(net: &mut SnnNetwork, rates: &MutationRates, init: &InitConfig, rng: &mut WorkbenchRng) {
    let gauss = |sd: f64, rng: &mut WorkbenchRng| Normal::new(0.0, sd).expect("finite sd").sample(rng);
    if rng.random::<f64>() < rates.add_neuron {
        let k = net.neurons.len();
        net.neurons.push(Neuron {
            threshold: rng.random_range(init.threshold_lo..=init.threshold_hi),
        });
        let pre = rng.random_range(0..k);
        let post = rng.random_range(0..k);
        net.synapses.push(random_synapse(pre, k, init, rng));
        net.synapses.push(random_synapse(k, post, init, rng));
    }
    if rng.random::<f64>() < rates.remove_neuron {
        let hidden = net.hidden();
        if !hidden.is_empty() {
            let k = hidden[rng.random_range(0..hidden.len())];
            remove_neuron(net, k);
        }
    }
    let n = net.neurons.len();
    if rng.random::<f64>() < rates.add_synapse && n > 1 {
        let pre = rng.random_range(0..n);
        let post = (pre + rng.random_range(1..n)) % n;
        net.synapses.push(random_synapse(pre, post, init, rng));
    }
    if rng.random::<f64>() < rates.remove_synapse && !net.synapses.is_empty() {
        let k = rng.random_range(0..net.synapses.len());
        net.synapses.remove(k);
    }
    if rng.random::<f64>() < rates.perturb_weight && !net.synapses.is_empty() {
        let k = rng.random_range(0..net.synapses.len());
        net.synapses[k].weight += gauss(rates.weight_sd, rng);
    }
    if rng.random::<f64>() < rates.perturb_threshold {
        let k = rng.random_range(0..n);
        let t = net.neurons[k].threshold + gauss(rates.threshold_sd, rng);
        net.neurons[k].threshold = t.max(init.threshold_lo * 0.1);
    }
    if rng.random::<f64>() < rates.resample_delay && !net.synapses.is_empty() {
        let k = rng.random_range(0..net.synapses.len());
        net.synapses[k].delay = rng.random_range(1..=init.max_delay);
    }
}

fn stats(generation: usize, pop: &[Member], best_so_far: f64) -> SnnGenStats {
    let best = &pop[0];
    SnnGenStats {
        generation,
        best: best.fitness,
        mean: pop.iter().map(|m| m.fitness).sum::<f64>() / pop.len() as f64,
        best_so_far,
        neurons: best.detector.network.neurons.len(),
        synapses: best.detector.network.synapses.len(),
    }
}

/// Stable sort by fitness, best first.
fn rank(pop: &mut [Member]) {
    pop.sort_by(|a, b| b.fitness.total_cmp(&a.fitness));
}

/// Evolves a detector for `task`; fitness is the balanced accuracy of the
/// thresholded score with the baseline fitted on the task itself.
pub fn evolve_snn(task: &BinaryTask, cfg: &SnnEvoConfig) -> Result<SnnEvoResult, SnnError> {
    cfg.validate()?;
    task.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| SnnError::Config(e.to_string()))?;
    let schedules = task.schedules(&cfg.sim);
    let eval = |nets: Vec<SnnNetwork>| -> Vec<Member> {
        pool.install(|| nets.into_par_iter().map(|n| score(n, &schedules, task, &cfg.sim)).collect())
    };
    let initial_nets = (0..cfg.population)
        .map(|i| {
            let mut rng = rng_from(derive_seed(cfg.seed, &[u64::MAX, i as u64]));
            let hidden = rng.random_range(cfg.init.hidden_min..=cfg.init.hidden_max);
            random_network(hidden, &cfg.init, &mut rng)
        })
        .collect();
    let mut pop = eval(initial_nets);
    let initial: Vec<f64> = pop.iter().map(|m| m.fitness).collect();
    rank(&mut pop);
    let mut best_so_far = pop[0].fitness;
    let mut history = vec![stats(0, &pop, best_so_far)];
    let parents = ((cfg.parent_fraction * cfg.population as f64).ceil() as usize).clamp(1, pop.len());
    for g in 1..=cfg.generations {
        let children: Vec<SnnNetwork> = (cfg.elite..cfg.population)
            .map(|i| {
                let mut rng = rng_from(derive_seed(cfg.seed, &[g as u64, i as u64]));
                let mut net = pop[rng.random_range(0..parents)].detector.network.clone();
                mutate(&mut net, &cfg.mutation, &cfg.init, &mut rng);
                net
            })
            .collect();
        let mut next: Vec<Member> = pop[..cfg.elite].to_vec();
        next.extend(eval(children));
        pop = next;
        rank(&mut pop);
        best_so_far = best_so_far.max(pop[0].fitness);
        history.push(stats(g, &pop, best_so_far));
    }
    let best = pop.swap_remove(0);
    Ok(SnnEvoResult {
        best: best.detector,
        fitness: best.fitness,
        initial,
        history,
    })
}
