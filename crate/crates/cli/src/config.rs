//! Layered experiment configuration: built-in defaults, then a TOML file,
//! then `--set key=value` overrides, then `--seed`. Unknown keys are
//! rejected. The top-level `seed` is copied into every module's `seed`, and
//! `--workers` into every worker count, when the configuration is resolved.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use tribench_core::boltzmann::TrainConfig;
use tribench_core::cnn::FitConfig;
use tribench_core::evolution::{EvoConfig, SyntheticTask};
use tribench_core::sampling::{GibbsConfig, OracleConfig, SamplerConfig};
use tribench_core::snn::SnnEvoConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding the four uncompressed MNIST IDX files.
    pub dir: PathBuf,
    /// Uniform subsample of the training split.
    pub train_images: usize,
    /// Uniform subsample of the test split used for evaluation.
    pub eval_images: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/mnist"),
            train_images: 6000,
            eval_images: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CnnFitness {
    /// Held-out accuracy of a LeNet trained with `fit`.
    Lenet,
    /// Known-optimum integer task; needs no data.
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub fitness: CnnFitness,
    pub evo: EvoConfig,
    pub fit: FitConfig,
    /// Also train the conventional (5, 20, 5, 50, 500) network identically.
    pub baseline: bool,
    pub synthetic: SyntheticTask,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            fitness: CnnFitness::Lenet,
            evo: EvoConfig {
                population: 16,
                generations: 8,
                failure_fitness: Some(0.0),
                ..EvoConfig::default()
            },
            fit: FitConfig::default(),
            baseline: true,
            synthetic: SyntheticTask::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnnEnergyConfig {
    /// Leading evaluation images simulated when a network file is given.
    pub images: usize,
}

impl Default for SnnEnergyConfig {
    fn default() -> Self {
        Self { images: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnnConfig {
    /// One detector is evolved per listed digit; all ten form an ensemble.
    pub digits: Vec<u8>,
    /// Positive and negative training images per detector.
    pub per_class: usize,
    pub evo: SnnEvoConfig,
    pub energy: SnnEnergyConfig,
}

impl Default for SnnConfig {
    fn default() -> Self {
        Self {
            digits: (0..10).collect(),
            per_class: 100,
            evo: SnnEvoConfig::default(),
            energy: SnnEnergyConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub rbm: TrainConfig,
    pub lbm: TrainConfig,
    pub sampler: OracleConfig,
    pub cnn: CnnConfig,
    pub snn: SnnConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            rbm: TrainConfig::default(),
            lbm: TrainConfig {
                sampler: SamplerConfig::Gibbs(GibbsConfig::default()),
                ..TrainConfig::default()
            },
            sampler: OracleConfig::default(),
            cnn: CnnConfig::default(),
            snn: SnnConfig::default(),
        }
    }
}

/// Evolutionary budgets at or above this many evaluations are flagged.
pub const LONG_RUNNING_EVALUATIONS: usize = 10_000;

impl ExperimentConfig {
    /// Resolves defaults, file, overrides and flags into a validated config.
    pub fn resolve(
        file: Option<&Path>,
        sets: &[String],
        seed: Option<u64>,
        workers: usize,
    ) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(Self::default()).expect("defaults serialize");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let overlay = serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))?;
            merge(&mut value, overlay);
        }
        for s in sets {
            apply_set(&mut value, s)?;
        }
        if let Some(seed) = seed {
            value["seed"] = Value::from(seed);
        }
        let mut cfg: Self = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.propagate(workers);
        Ok(cfg)
    }

    fn propagate(&mut self, workers: usize) {
        let s = self.seed;
        self.rbm.seed = s;
        self.lbm.seed = s;
        self.sampler.seed = s;
        self.cnn.evo.seed = s;
        self.cnn.fit.seed = s;
        self.snn.evo.seed = s;
        self.cnn.evo.workers = workers;
        self.snn.evo.workers = workers;
    }

    /// Canonical JSON (keys sorted) with worker counts zeroed, since they
    /// never change results.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.propagate(0);
        serde_json::to_string(&serde_json::to_value(&c).expect("config serializes")).expect("value serializes")
    }

    /// SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Objects merge recursively; anything else replaces. An object carrying a
/// different `kind` tag replaces the base outright so that variant fields do
/// not leak across variants.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) if !kind_changes(b, &o) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn kind_changes(base: &Map<String, Value>, overlay: &Map<String, Value>) -> bool {
    matches!((base.get("kind"), overlay.get("kind")), (Some(a), Some(b)) if a != b)
}

/// `a.b.c=value`, where `value` is a TOML value or, failing that, a bare
/// string.
fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {assignment}: expected key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("--set {assignment}: empty key")));
    }
    let parsed = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .map(|v| serde_json::to_value(v).expect("toml values are json"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let mut slot = root;
    for part in key.split('.') {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("--set {key}: {part} is inside a non-table value")))?;
        slot = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    merge(slot, parsed);
    Ok(())
}
