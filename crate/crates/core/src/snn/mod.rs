//! Discrete-time integrate-and-fire networks with delayed synapses.
//!
//! Each timestep delivers external injections and queued synaptic arrivals,
//! then every neuron whose potential reaches its threshold fires and resets
//! to zero. A spike launched at `t` through a synapse of delay `d` arrives
//! at `t + d`; arrivals past the horizon are dropped. Images enter through a
//! streaming scan: at step `t < 28` input neuron `i` receives the pixel at
//! row `i`, column `t` (or row `t`, column `i` for a row scan).

mod detector;
mod evolve;

#[cfg(test)]
mod tests;

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{IMAGE_SIDE, PIXELS};
use crate::energy::ActivityCounts;
use crate::rng::{rng_from, WorkbenchRng};

pub use detector::{
    balanced_accuracy, detector_score, ensemble_classify, fit_baseline, Baseline, BinaryTask, Detector,
    DetectorEnsemble, ENSEMBLE_FORMAT,
};
pub use evolve::{evolve_snn, InitConfig, MutationRates, SnnEvoConfig, SnnEvoResult, SnnGenStats, SNN_GENERATIONS_HEADER};

#[derive(Debug, Error, PartialEq)]
pub enum SnnError {
    #[error("invalid network: {0}")]
    Network(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("network file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Neuron {
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synapse {
    pub pre: usize,
    pub post: usize,
    pub weight: f64,
    pub delay: u32,
}

pub const NETWORK_FORMAT: &str = "tribench-snn";
pub const NETWORK_VERSION: u32 = 1;

/// `inputs[i]` is the neuron fed by scan line `i`; lines beyond
/// `inputs.len()` are not connected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnnNetwork {
    pub neurons: Vec<Neuron>,
    pub synapses: Vec<Synapse>,
    pub inputs: Vec<usize>,
    pub output: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    network: SnnNetwork,
}

impl SnnNetwork {
    pub fn validate(&self) -> Result<(), SnnError> {
        let n = self.neurons.len();
        let bad = |m: String| Err(SnnError::Network(m));
        if self.output >= n {
            return bad(format!("output neuron {} of {n}", self.output));
        }
        if self.inputs.len() > IMAGE_SIDE {
            return bad(format!("{} inputs, at most {IMAGE_SIDE}", self.inputs.len()));
        }
        if let Some(&i) = self.inputs.iter().find(|&&i| i >= n) {
            return bad(format!("input neuron {i} of {n}"));
        }
        for (k, nr) in self.neurons.iter().enumerate() {
            if !(nr.threshold > 0.0) {
                return bad(format!("neuron {k} threshold {} must be positive", nr.threshold));
            }
        }
        for (k, s) in self.synapses.iter().enumerate() {
            if s.pre >= n || s.post >= n {
                return bad(format!("synapse {k} references {}->{} of {n}", s.pre, s.post));
            }
            if s.delay == 0 {
                return bad(format!("synapse {k} has delay 0"));
            }
            if s.weight.is_nan() {
                return bad(format!("synapse {k} weight is NaN"));
            }
        }
        Ok(())
    }

    /// Neurons that are neither inputs nor the output.
    pub fn hidden(&self) -> Vec<usize> {
        (0..self.neurons.len())
            .filter(|k| *k != self.output && !self.inputs.contains(k))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            format: NETWORK_FORMAT.into(),
            version: NETWORK_VERSION,
            network: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SnnError> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| SnnError::Format(e.to_string()))?;
        if file.format != NETWORK_FORMAT || file.version != NETWORK_VERSION {
            return Err(SnnError::Format(format!("unsupported {} v{}", file.format, file.version)));
        }
        file.network.validate()?;
        Ok(file.network)
    }

    pub fn save(&self, path: &Path) -> Result<(), SnnError> {
        std::fs::write(path, self.to_json()).map_err(|e| SnnError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SnnError> {
        let text = std::fs::read_to_string(path).map_err(|e| SnnError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scan {
    #[default]
    Columns,
    Rows,
}

/// `charges[t][i]`: charge injected into scan line `i` at step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanSchedule {
    charges: Vec<[f64; IMAGE_SIDE]>,
}

impl ScanSchedule {
    /// Row-major 28x28 intensities in [0, 1].
    pub fn from_pixels(pixels: &[f64], scan: Scan) -> Self {
        assert_eq!(pixels.len(), PIXELS, "pixel count");
        let charges = (0..IMAGE_SIDE)
            .map(|t| {
                std::array::from_fn(|i| match scan {
                    Scan::Columns => pixels[i * IMAGE_SIDE + t],
                    Scan::Rows => pixels[t * IMAGE_SIDE + i],
                })
            })
            .collect();
        Self { charges }
    }

    pub fn steps(&self) -> usize {
        self.charges.len()
    }

    pub fn charge(&self, t: usize, line: usize) -> f64 {
        self.charges[t][line]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Total timesteps: the scan plus settling time.
    pub horizon: usize,
    /// Fraction of potential lost at the start of each step.
    pub leak: f64,
    pub scan: Scan,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 2 * IMAGE_SIDE,
            leak: 0.0,
            scan: Scan::Columns,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SnnError> {
        if self.horizon < IMAGE_SIDE {
            return Err(SnnError::Config(format!("horizon {} shorter than the scan", self.horizon)));
        }
        if !(0.0..1.0).contains(&self.leak) {
            return Err(SnnError::Config(format!("leak {} outside [0, 1)", self.leak)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Spike {
    pub time: u32,
    pub neuron: u32,
}

/// Events are ordered by time, then neuron id.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrace {
    pub horizon: usize,
    pub events: Vec<Spike>,
    pub counts: Vec<u32>,
    /// Some potential left the finite range and was clamped.
    pub saturated: bool,
}

impl SpikeTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,neuron\n");
        for s in &self.events {
            let _ = writeln!(out, "{},{}", s.time, s.neuron);
        }
        out
    }
}

/// Adjacency lists for repeated simulation of one network.
#[derive(Clone, Debug)]
pub struct CompiledNet {
    thresholds: Vec<f64>,
    /// `(post, weight, delay)` per presynaptic neuron.
    outgoing: Vec<Vec<(usize, f64, usize)>>,
    inputs: Vec<usize>,
    output: usize,
    synapses: usize,
}

impl CompiledNet {
    pub fn new(net: &SnnNetwork) -> Self {
        let mut outgoing = vec![Vec::new(); net.neurons.len()];
        for s in &net.synapses {
            outgoing[s.pre].push((s.post, s.weight, s.delay as usize));
        }
        Self {
            thresholds: net.neurons.iter().map(|n| n.threshold).collect(),
            outgoing,
            inputs: net.inputs.clone(),
            output: net.output,
            synapses: net.synapses.len(),
        }
    }

    pub fn output(&self) -> usize {
        self.output
    }

    /// Runs one schedule. `record` controls whether spike events are kept.
    pub fn run(&self, schedule: &ScanSchedule, cfg: &SimConfig, record: bool) -> (SpikeTrace, ActivityCounts) {
        let n = self.thresholds.len();
        let horizon = cfg.horizon;
        let mut charge = vec![0.0f64; horizon * n];
        let mut deliveries = vec![0u32; horizon * n];
        for t in 0..schedule.steps().min(horizon) {
            for (line, &k) in self.inputs.iter().enumerate() {
                let c = schedule.charge(t, line);
                charge[t * n + k] += c;
                deliveries[t * n + k] += u32::from(c != 0.0);
            }
        }
        let mut potential = vec![0.0f64; n];
        let mut counts = vec![0u32; n];
        let mut events = Vec::new();
        let mut activity = ActivityCounts {
            neurons: n as u64,
            synapses: self.synapses as u64,
            cycles: horizon as u64,
            runs: 1,
            ..Default::default()
        };
        let mut saturated = false;
        for t in 0..horizon {
            let row = t * n;
            for k in 0..n {
                let mut p = potential[k];
                if cfg.leak > 0.0 {
                    p *= 1.0 - cfg.leak;
                }
                let arrived = deliveries[row + k];
                p += charge[row + k];
                if !p.is_finite() {
                    saturated = true;
                    p = if p.is_nan() { 0.0 } else { p.clamp(f64::MIN, f64::MAX) };
                }
                activity.accumulates += u64::from(arrived);
                let fired = p >= self.thresholds[k];
                if fired {
                    p = 0.0;
                    counts[k] += 1;
                    activity.fires += 1;
                    if record {
                        events.push(Spike {
                            time: t as u32,
                            neuron: k as u32,
                        });
                    }
                    for &(post, w, d) in &self.outgoing[k] {
                        let at = t + d;
                        activity.delay_stages += d.min(horizon - 1 - t) as u64;
                        if at < horizon {
                            activity.synapse_active += 1;
                            charge[at * n + post] += w;
                            deliveries[at * n + post] += u32::from(w != 0.0);
                        }
                    }
                }
                if fired || arrived > 0 {
                    activity.neuron_active_slots += 1;
                }
                potential[k] = p;
            }
        }
        activity.neuron_idle_slots = activity.neurons * activity.cycles - activity.neuron_active_slots;
        activity.synapse_passive_slots = activity.synapses * activity.cycles - activity.synapse_active;
        let trace = SpikeTrace {
            horizon,
            events,
            counts,
            saturated,
        };
        (trace, activity)
    }
}

/// Simulates `net` on one schedule. Assumes `net` and `cfg` are valid.
pub fn simulate(net: &SnnNetwork, schedule: &ScanSchedule, cfg: &SimConfig) -> (SpikeTrace, ActivityCounts) {
    CompiledNet::new(net).run(schedule, cfg, true)
}

/// 28 input neurons (ids 0..28), one output (id 28), then `hidden` more;
/// each ordered pair of distinct neurons is connected with probability
/// `cfg.density`.
pub fn random_network(hidden: usize, cfg: &InitConfig, rng: &mut WorkbenchRng) -> SnnNetwork {
    let n = IMAGE_SIDE + 1 + hidden;
    let neurons = (0..n)
        .map(|_| Neuron {
            threshold: rng.random_range(cfg.threshold_lo..=cfg.threshold_hi),
        })
        .collect();
    let normal = Normal::new(cfg.weight_mean, cfg.weight_sd).expect("finite weight distribution");
    let mut synapses = Vec::new();
    for pre in 0..n {
        for post in 0..n {
            if pre != post && rng.random::<f64>() < cfg.density {
                synapses.push(Synapse {
                    pre,
                    post,
                    weight: normal.sample(rng),
                    delay: rng.random_range(1..=cfg.max_delay),
                });
            }
        }
    }
    SnnNetwork {
        neurons,
        synapses,
        inputs: (0..IMAGE_SIDE).collect(),
        output: IMAGE_SIDE,
    }
}

/// Fixed 128-neuron, 357-synapse network used to calibrate the energy
/// profile. Weights lean excitatory so the stimulus drives every stage.
pub fn reference_network(seed: u64) -> SnnNetwork {
    const NEURONS: usize = 128;
    const SYNAPSES: usize = 357;
    let mut rng = rng_from(seed);
    let cfg = InitConfig {
        weight_mean: 0.8,
        ..InitConfig::default()
    };
    let mut net = random_network(NEURONS - IMAGE_SIDE - 1, &InitConfig { density: 0.0, ..cfg }, &mut rng);
    let pairs: Vec<(usize, usize)> = (0..NEURONS)
        .flat_map(|a| (0..NEURONS).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let normal = Normal::new(cfg.weight_mean, cfg.weight_sd).expect("finite weight distribution");
    for i in rand::seq::index::sample(&mut rng, pairs.len(), SYNAPSES).into_vec() {
        let (pre, post) = pairs[i];
        net.synapses.push(Synapse {
            pre,
            post,
            weight: normal.sample(&mut rng),
            delay: rng.random_range(1..=cfg.max_delay),
        });
    }
    net
}

/// Deterministic ring-shaped stimulus `k` for the reference recording.
pub fn reference_stimulus(k: usize) -> Vec<f64> {
    let radius = 5.0 + (k % 5) as f64;
    let (cy, cx) = (13.5 + (k % 3) as f64 - 1.0, 13.5 + (k % 4) as f64 - 1.5);
    (0..PIXELS)
        .map(|p| {
            let (y, x) = ((p / IMAGE_SIDE) as f64, (p % IMAGE_SIDE) as f64);
            let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
            (1.0 - (d - radius).abs() / 2.0).clamp(0.0, 1.0)
        })
        .collect()
}
