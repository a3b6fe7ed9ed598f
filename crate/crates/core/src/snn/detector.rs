use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CompiledNet, ScanSchedule, SimConfig, SnnError, SnnNetwork};
use crate::data::{Dataset, CLASSES};
use crate::rng::{derive_seed, rng_from};

/// Affine map from output fire count to score: `(count - offset) / scale`.
/// A positive score means "yes"; a negative scale inverts the polarity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub offset: f64,
    pub scale: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Self { offset: 0.0, scale: 1.0 }
    }
}

impl Baseline {
    pub fn score(&self, count: u32) -> f64 {
        (f64::from(count) - self.offset) / self.scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detector {
    pub network: SnnNetwork,
    pub baseline: Baseline,
}

/// Images with a yes/no answer, e.g. "is this a zero".
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryTask {
    pub images: Vec<Vec<f64>>,
    pub positive: Vec<bool>,
}

impl BinaryTask {
    /// `per_class` images of `digit` and `per_class` others, drawn without
    /// replacement in an order fixed by `seed`.
    pub fn digit_vs_rest(ds: &Dataset, digit: u8, per_class: usize, seed: u64) -> Result<Self, SnnError> {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng_from(derive_seed(seed, &[u64::from(digit)])));
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for i in order {
            let s = &ds.samples()[i];
            let bucket = if s.label() == digit { &mut pos } else { &mut neg };
            if bucket.len() < per_class {
                bucket.push(s.pixels().to_vec());
            }
        }
        if pos.len() < per_class || neg.len() < per_class {
            return Err(SnnError::Config(format!(
                "digit {digit}: {} positives and {} negatives available, {per_class} each requested",
                pos.len(),
                neg.len()
            )));
        }
        let positive = [vec![true; per_class], vec![false; per_class]].concat();
        pos.extend(neg);
        Ok(Self { images: pos, positive })
    }

    pub fn validate(&self) -> Result<(), SnnError> {
        if self.images.len() != self.positive.len() {
            return Err(SnnError::Config("images and answers differ in length".into()));
        }
        if !self.positive.iter().any(|&p| p) || self.positive.iter().all(|&p| p) {
            return Err(SnnError::Config("task needs both positive and negative images".into()));
        }
        Ok(())
    }

    pub fn schedules(&self, cfg: &SimConfig) -> Vec<ScanSchedule> {
        self.images.iter().map(|im| ScanSchedule::from_pixels(im, cfg.scan)).collect()
    }
}

/// Mean of the true-positive and true-negative rates.
pub fn balanced_accuracy(predicted: &[bool], positive: &[bool]) -> f64 {
    let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&y, &t) in predicted.iter().zip(positive) {
        if t {
            p += 1;
            tp += usize::from(y);
        } else {
            n += 1;
            tn += usize::from(!y);
        }
    }
    let rate = |hit: usize, all: usize| if all == 0 { 0.0 } else { hit as f64 / all as f64 };
    0.5 * (rate(tp, p) + rate(tn, n))
}

/// Threshold and polarity on fire counts maximizing balanced accuracy.
/// Offsets sit halfway between integer counts; ties keep the lowest offset
/// and prefer "more fires means yes". The scale magnitude is the count
/// standard deviation (at least 1) so ensemble members are comparable.
pub fn fit_baseline(counts: &[u32], positive: &[bool]) -> (Baseline, f64) {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mean = counts.iter().map(|&c| f64::from(c)).sum::<f64>() / counts.len().max(1) as f64;
    let var = counts.iter().map(|&c| (f64::from(c) - mean).powi(2)).sum::<f64>() / counts.len().max(1) as f64;
    let spread = var.sqrt().max(1.0);
    let mut best = (Baseline { offset: -0.5, scale: spread }, f64::NEG_INFINITY);
    let mut predicted = vec![false; counts.len()];
    for level in 0..=max + 1 {
        let offset = f64::from(level) - 0.5;
        for sign in [1.0, -1.0] {
            for (p, &c) in predicted.iter_mut().zip(counts) {
                *p = sign * (f64::from(c) - offset) > 0.0;
            }
            let ba = balanced_accuracy(&predicted, positive);
            if ba > best.1 {
                best = (Baseline { offset, scale: sign * spread }, ba);
            }
        }
    }
    best
}

/// Output fire count over the horizon, mapped through the baseline.
pub fn detector_score(det: &Detector, pixels: &[f64], cfg: &SimConfig) -> f64 {
    let net = CompiledNet::new(&det.network);
    let (trace, _) = net.run(&ScanSchedule::from_pixels(pixels, cfg.scan), cfg, false);
    det.baseline.score(trace.counts[net.output()])
}

pub const ENSEMBLE_FORMAT: &str = "tribench-snn-ensemble";

/// One detector per digit, indexed by digit.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorEnsemble {
    members: Vec<Detector>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleManifest {
    format: String,
    version: u32,
    members: Vec<EnsembleEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleEntry {
    digit: u8,
    network: PathBuf,
    baseline: Baseline,
}

impl DetectorEnsemble {
    pub fn new(members: Vec<Detector>) -> Result<Self, SnnError> {
        if members.len() != CLASSES {
            return Err(SnnError::Config(format!("ensemble has {} members, expected {CLASSES}", members.len())));
        }
        for m in &members {
            m.network.validate()?;
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Detector] {
        &self.members
    }

    /// Writes `digit_<d>.json` network files and a manifest listing them.
    pub fn save(&self, dir: &Path) -> Result<(), SnnError> {
        let io = |e: std::io::Error| SnnError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut entries = Vec::new();
        for (d, m) in self.members.iter().enumerate() {
            let name = PathBuf::from(format!("digit_{d}.json"));
            m.network.save(&dir.join(&name))?;
            entries.push(EnsembleEntry {
                digit: d as u8,
                network: name,
                baseline: m.baseline,
            });
        }
        let manifest = EnsembleManifest {
            format: ENSEMBLE_FORMAT.into(),
            version: 1,
            members: entries,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(dir.join("ensemble.json"), text).map_err(io)
    }

    pub fn load(dir: &Path) -> Result<Self, SnnError> {
        let path = dir.join("ensemble.json");
        let text = std::fs::read_to_string(&path).map_err(|e| SnnError::Io(format!("{}: {e}", path.display())))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text).map_err(|e| SnnError::Format(e.to_string()))?;
        if manifest.format != ENSEMBLE_FORMAT || manifest.version != 1 {
            return Err(SnnError::Format(format!("unsupported {} v{}", manifest.format, manifest.version)));
        }
        let mut members = Vec::new();
        for (d, e) in manifest.members.into_iter().enumerate() {
            if usize::from(e.digit) != d {
                return Err(SnnError::Format(format!("member {d} is labelled digit {}", e.digit)));
            }
            members.push(Detector {
                network: SnnNetwork::load(&dir.join(e.network))?,
                baseline: e.baseline,
            });
        }
        Self::new(members)
    }
}

/// Digit whose detector scores highest; ties go to the lowest digit.
pub fn ensemble_classify(ens: &DetectorEnsemble, pixels: &[f64], cfg: &SimConfig) -> u8 {
    let mut best = (0u8, f64::NEG_INFINITY);
    for (d, m) in ens.members.iter().enumerate() {
        let s = detector_score(m, pixels, cfg);
        if s > best.1 {
            best = (d as u8, s);
        }
    }
    best.0
}
