//! Energy and power estimates from spiking activity.
//!
//! Every estimate is a linear combination of activity counts and per-phase
//! energies. The core analog total excludes the digital delay-chain term.
//! Average power is per-image energy times the clock frequency.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snn::{reference_network, reference_stimulus, simulate, ScanSchedule, SimConfig, SnnNetwork};

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("phase energy {0} is negative or non-finite")]
    BadPhase(&'static str),
    #[error("inconsistent activity: {0}")]
    Inconsistent(String),
    #[error("phase {0:?} has zero activity and cannot be calibrated")]
    ZeroCount(Phase),
    #[error("calibration of {phase:?} needs a negative energy ({value:e} J)")]
    NegativeSolution { phase: Phase, value: f64 },
    #[error("profile: {0}")]
    Profile(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    /// Low-resistance state in ohms.
    pub lrs_ohms: f64,
    pub on_off_ratio: f64,
    pub clock_hz: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            lrs_ohms: 60e3,
            on_off_ratio: 10.0,
            clock_hz: 16.67e6,
        }
    }
}

impl DeviceParams {
    /// High-resistance state: `lrs * on_off_ratio`.
    pub fn hrs_ohms(&self) -> f64 {
        self.lrs_ohms * self.on_off_ratio
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        for (v, name) in [
            (self.lrs_ohms, "lrs_ohms"),
            (self.on_off_ratio, "on_off_ratio"),
            (self.clock_hz, "clock_hz"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnergyError::NonPositive(name));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    NeuronFire,
    NeuronAccumulate,
    NeuronIdle,
    SynapseActive,
    SynapsePassive,
    DelayStage,
}

pub const PHASES: [Phase; 6] = [
    Phase::NeuronFire,
    Phase::NeuronAccumulate,
    Phase::NeuronIdle,
    Phase::SynapseActive,
    Phase::SynapsePassive,
    Phase::DelayStage,
];

/// Joules per event (fire, accumulate, synapse active), per element-cycle
/// (idle, passive) or per spike per delay stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEnergies {
    pub neuron_fire: f64,
    pub neuron_accumulate: f64,
    pub neuron_idle: f64,
    pub synapse_active: f64,
    pub synapse_passive: f64,
    pub delay_stage: f64,
}

impl PhaseEnergies {
    pub fn get(&self, p: Phase) -> f64 {
        match p {
            Phase::NeuronFire => self.neuron_fire,
            Phase::NeuronAccumulate => self.neuron_accumulate,
            Phase::NeuronIdle => self.neuron_idle,
            Phase::SynapseActive => self.synapse_active,
            Phase::SynapsePassive => self.synapse_passive,
            Phase::DelayStage => self.delay_stage,
        }
    }

    pub fn set(&mut self, p: Phase, v: f64) {
        match p {
            Phase::NeuronFire => self.neuron_fire = v,
            Phase::NeuronAccumulate => self.neuron_accumulate = v,
            Phase::NeuronIdle => self.neuron_idle = v,
            Phase::SynapseActive => self.synapse_active = v,
            Phase::SynapsePassive => self.synapse_passive = v,
            Phase::DelayStage => self.delay_stage = v,
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        for p in PHASES {
            let v = self.get(p);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EnergyError::BadPhase(phase_name(p)));
            }
        }
        Ok(())
    }
}

pub fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::NeuronFire => "neuron_fire",
        Phase::NeuronAccumulate => "neuron_accumulate",
        Phase::NeuronIdle => "neuron_idle",
        Phase::SynapseActive => "synapse_active",
        Phase::SynapsePassive => "synapse_passive",
        Phase::DelayStage => "delay_stage",
    }
}

/// Activity summed over `runs` simulations of `cycles` total timesteps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityCounts {
    pub fires: u64,
    /// Nonzero charge deliveries, external or synaptic.
    pub accumulates: u64,
    /// Neuron-cycles with a fire or at least one delivery.
    pub neuron_active_slots: u64,
    pub neuron_idle_slots: u64,
    /// Spikes delivered through a synapse.
    pub synapse_active: u64,
    pub synapse_passive_slots: u64,
    /// Sum over in-flight spikes of the delay stages they occupied.
    pub delay_stages: u64,
    /// Timesteps summed over all runs.
    pub cycles: u64,
    pub neurons: u64,
    pub synapses: u64,
    pub runs: u64,
}

impl ActivityCounts {
    pub fn count(&self, p: Phase) -> u64 {
        match p {
            Phase::NeuronFire => self.fires,
            Phase::NeuronAccumulate => self.accumulates,
            Phase::NeuronIdle => self.neuron_idle_slots,
            Phase::SynapseActive => self.synapse_active,
            Phase::SynapsePassive => self.synapse_passive_slots,
            Phase::DelayStage => self.delay_stages,
        }
    }

    /// Element-cycle slots are partitioned into active and idle/passive.
    pub fn validate(&self) -> Result<(), EnergyError> {
        let bad = |m: String| Err(EnergyError::Inconsistent(m));
        if self.neuron_active_slots + self.neuron_idle_slots != self.neurons * self.cycles {
            return bad(format!(
                "neuron slots {} + {} != {} neurons x {} cycles",
                self.neuron_active_slots, self.neuron_idle_slots, self.neurons, self.cycles
            ));
        }
        if self.synapse_active + self.synapse_passive_slots != self.synapses * self.cycles {
            return bad(format!(
                "synapse slots {} + {} != {} synapses x {} cycles",
                self.synapse_active, self.synapse_passive_slots, self.synapses, self.cycles
            ));
        }
        if self.fires > self.neuron_active_slots {
            return bad(format!("{} fires exceed {} active slots", self.fires, self.neuron_active_slots));
        }
        if self.runs == 0 && self.cycles > 0 {
            return bad("cycles recorded without runs".into());
        }
        Ok(())
    }

    /// Sum of two recordings of the same network.
    pub fn merge(&self, other: &ActivityCounts) -> ActivityCounts {
        ActivityCounts {
            fires: self.fires + other.fires,
            accumulates: self.accumulates + other.accumulates,
            neuron_active_slots: self.neuron_active_slots + other.neuron_active_slots,
            neuron_idle_slots: self.neuron_idle_slots + other.neuron_idle_slots,
            synapse_active: self.synapse_active + other.synapse_active,
            synapse_passive_slots: self.synapse_passive_slots + other.synapse_passive_slots,
            delay_stages: self.delay_stages + other.delay_stages,
            cycles: self.cycles + other.cycles,
            neurons: self.neurons.max(other.neurons),
            synapses: self.synapses.max(other.synapses),
            runs: self.runs + other.runs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub neuron_fire: f64,
    pub neuron_accumulate: f64,
    pub neuron_idle: f64,
    pub synapse_active: f64,
    pub synapse_passive: f64,
    pub delay_stage: f64,
}

impl Breakdown {
    fn terms(&self) -> [f64; 6] {
        [
            self.neuron_fire,
            self.neuron_accumulate,
            self.neuron_idle,
            self.synapse_active,
            self.synapse_passive,
            self.delay_stage,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Joules over all runs.
    pub total: f64,
    /// `total` minus the delay-chain term.
    pub core: f64,
    pub total_per_image: f64,
    pub core_per_image: f64,
    /// Watts: `total_per_image * clock`.
    pub average_power: f64,
    pub core_power: f64,
    pub breakdown: Breakdown,
    pub runs: u64,
}

impl EnergyReport {
    pub fn table(&self) -> String {
        let b = &self.breakdown;
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:>14}", "phase", "energy (J)");
        for (name, v) in PHASES.iter().map(|&p| phase_name(p)).zip(b.terms()) {
            let _ = writeln!(out, "{name:<20} {v:>14.6e}");
        }
        let _ = writeln!(out, "{:<20} {:>14.6e}", "total", self.total);
        let _ = writeln!(out, "{:<20} {:>14.6e}", "core", self.core);
        let _ = writeln!(out, "{:<20} {:>14.6e}", "total per image", self.total_per_image);
        let _ = writeln!(out, "{:<20} {:>14.6e}", "core per image", self.core_per_image);
        let _ = writeln!(out, "{:<20} {:>14.6e}", "average power (W)", self.average_power);
        let _ = writeln!(out, "{:<20} {:>14.6e}", "core power (W)", self.core_power);
        out
    }
}

/// `e * f`.
pub fn power_from_energy(energy_per_image: f64, clock_hz: f64) -> f64 {
    energy_per_image * clock_hz
}

pub fn account(activity: &ActivityCounts, phases: &PhaseEnergies, device: &DeviceParams) -> Result<EnergyReport, EnergyError> {
    activity.validate()?;
    phases.validate()?;
    device.validate()?;
    let term = |p: Phase| activity.count(p) as f64 * phases.get(p);
    let breakdown = Breakdown {
        neuron_fire: term(Phase::NeuronFire),
        neuron_accumulate: term(Phase::NeuronAccumulate),
        neuron_idle: term(Phase::NeuronIdle),
        synapse_active: term(Phase::SynapseActive),
        synapse_passive: term(Phase::SynapsePassive),
        delay_stage: term(Phase::DelayStage),
    };
    let terms = breakdown.terms();
    let core: f64 = terms[..5].iter().sum();
    let total = core + breakdown.delay_stage;
    let runs = activity.runs.max(1) as f64;
    Ok(EnergyReport {
        total,
        core,
        total_per_image: total / runs,
        core_per_image: core / runs,
        average_power: power_from_energy(total / runs, device.clock_hz),
        core_power: power_from_energy(core / runs, device.clock_hz),
        breakdown,
        runs: activity.runs,
    })
}

/// Solves for the one `free` phase energy that makes the per-image total
/// equal `target_per_image`, keeping every other phase from `fixed`.
pub fn calibrate(
    target_per_image: f64,
    activity: &ActivityCounts,
    free: Phase,
    fixed: &PhaseEnergies,
) -> Result<PhaseEnergies, EnergyError> {
    activity.validate()?;
    let count = activity.count(free);
    if count == 0 {
        return Err(EnergyError::ZeroCount(free));
    }
    let runs = activity.runs.max(1) as f64;
    let others: f64 = PHASES
        .iter()
        .filter(|&&p| p != free)
        .map(|&p| activity.count(p) as f64 * fixed.get(p))
        .sum();
    let value = (target_per_image * runs - others) / count as f64;
    if value < 0.0 {
        return Err(EnergyError::NegativeSolution { phase: free, value });
    }
    let mut out = *fixed;
    out.set(free, value);
    Ok(out)
}

/// Per-image totals the reference profile reproduces.
pub const REFERENCE_TOTAL_J: f64 = 18.26e-9;
pub const REFERENCE_CORE_J: f64 = 5.24e-9;
pub const REFERENCE_NEURONS: usize = 128;
pub const REFERENCE_SYNAPSES: usize = 357;
/// Stimulus images in the reference recording.
pub const REFERENCE_RUNS: usize = 10;
const REFERENCE_SEED: u64 = 2017;

/// Relative weights of the core phases before scaling. Only the aggregate
/// core energy is pinned down, so the split is a modelling choice: fire and
/// synapse events dominate, static leakage is small.
const CORE_SHAPE: PhaseEnergies = PhaseEnergies {
    neuron_fire: 1.0,
    neuron_accumulate: 0.25,
    neuron_idle: 0.01,
    synapse_active: 0.1,
    synapse_passive: 0.001,
    delay_stage: 0.0,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyProfile {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub device: DeviceParams,
    pub phases: PhaseEnergies,
    /// Activity the profile was calibrated on, if any.
    pub reference_activity: Option<ActivityCounts>,
}

pub const PROFILE_FORMAT: &str = "tribench-energy-profile";

/// The 128-neuron, 357-synapse reference network and its stimulus images.
pub fn reference_setup() -> (SnnNetwork, Vec<Vec<f64>>) {
    (reference_network(REFERENCE_SEED), (0..REFERENCE_RUNS).map(reference_stimulus).collect())
}

/// Activity of the reference network over its stimulus set.
pub fn reference_activity() -> ActivityCounts {
    let (net, stimuli) = reference_setup();
    let cfg = SimConfig::default();
    stimuli
        .iter()
        .map(|px| simulate(&net, &ScanSchedule::from_pixels(px, cfg.scan), &cfg).1)
        .fold(ActivityCounts::default(), |acc, a| acc.merge(&a))
}

impl EnergyProfile {
    /// Core phases scaled to the core target, then the delay stage solved
    /// for the total target.
    pub fn reference() -> Self {
        let activity = reference_activity();
        let device = DeviceParams::default();
        let shape_report = account(&activity, &CORE_SHAPE, &device).expect("reference activity is consistent");
        let scale = REFERENCE_CORE_J / shape_report.core_per_image;
        let mut core = CORE_SHAPE;
        for p in PHASES {
            core.set(p, CORE_SHAPE.get(p) * scale);
        }
        let phases = calibrate(REFERENCE_TOTAL_J, &activity, Phase::DelayStage, &core)
            .expect("reference network exercises its delay chains");
        Self {
            format: PROFILE_FORMAT.into(),
            version: 1,
            name: "reference".into(),
            device,
            phases,
            reference_activity: Some(activity),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, EnergyError> {
        let p: Self = serde_json::from_str(text).map_err(|e| EnergyError::Profile(e.to_string()))?;
        if p.format != PROFILE_FORMAT || p.version != 1 {
            return Err(EnergyError::Profile(format!("unsupported profile {} v{}", p.format, p.version)));
        }
        p.device.validate()?;
        p.phases.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }
}
