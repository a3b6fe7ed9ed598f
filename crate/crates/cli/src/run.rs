//! Immutable run directories and their manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use tribench_core::data::{sha256_hex, DatasetManifest};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MANIFEST_FORMAT: &str = "tribench-run";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub code_version: String,
    pub config: Value,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub datasets: Vec<DatasetManifest>,
    pub notes: Vec<String>,
    pub started: String,
    pub finished: Option<String>,
    /// `running`, `ok` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Output directory of one command invocation.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Nanos, true)
}

impl Run {
    /// Creates `<out>/<command>-<timestamp>-<hash prefix>` (with a numeric
    /// suffix if that name is taken) and writes the initial manifest and the
    /// resolved config.
    pub fn create(out: &Path, command: &str, cfg: &ExperimentConfig, workers: usize) -> Result<Self, CliError> {
        let io = |e: std::io::Error| CliError::Compute(format!("{}: {e}", out.display()));
        std::fs::create_dir_all(out).map_err(io)?;
        let hash = cfg.hash();
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.9fZ");
        let base = format!("{}-{stamp}-{}", command.replace(' ', "-"), &hash[..12]);
        let mut dir = out.join(&base);
        let mut k = 1;
        loop {
            match std::fs::create_dir(&dir) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    dir = out.join(format!("{base}-{k}"));
                    k += 1;
                }
                Err(e) => return Err(io(e)),
            }
        }
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::from_str(&cfg.canonical_json()).expect("canonical json parses"),
            config_hash: hash,
            seed: cfg.seed,
            workers,
            datasets: Vec::new(),
            notes: Vec::new(),
            started: now(),
            finished: None,
            status: "running".into(),
            error: None,
            outputs: Vec::new(),
        };
        let run = Self { dir, manifest };
        let config_toml = toml::to_string(cfg).map_err(|e| CliError::Compute(e.to_string()))?;
        run.write("config.toml", config_toml.as_bytes())?;
        run.save_manifest()?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Compute(format!("{}: {e}", parent.display())))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))
    }

    pub fn save_manifest(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        self.write(MANIFEST_FILE, text.as_bytes())
    }

    /// Records the outcome and an inventory of every file in the run
    /// directory except the manifest itself.
    pub fn finish(&mut self, result: &Result<(), CliError>) -> Result<(), CliError> {
        self.manifest.finished = Some(now());
        match result {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.error = Some(e.to_string());
            }
        }
        let mut outputs = Vec::new();
        collect(&self.dir, &self.dir, &mut outputs)?;
        outputs.sort_by(|a, b| a.name.cmp(&b.name));
        self.manifest.outputs = outputs;
        self.save_manifest()
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<OutputFile>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Compute(format!("{}: {e}", dir.display()));
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let name = path.strip_prefix(root).expect("inside root").to_string_lossy().into_owned();
        if name == MANIFEST_FILE {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(io)?;
        out.push(OutputFile {
            name,
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    Ok(())
}
