use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use tribench_core::boltzmann::{self, metrics_csv, BoltzmannError, Checkpoint, EpochMetrics, ModelKind};
use tribench_core::cnn::{train_and_score, FitConfig, LeNetHyper};
use tribench_core::data::{file_sha256, load_idx, subsample, DataError, Dataset, DatasetManifest, Split, MNIST_SHA256};
use tribench_core::energy::{account, reference_setup, ActivityCounts, EnergyProfile, EnergyReport};
use tribench_core::evolution::{evolve, generations_csv, genome_seed, GeneSpec, Genome};
use tribench_core::rng::derive_seed;
use tribench_core::sampling::{oracle_suite, OracleRow, ORACLE_HEADER};
use tribench_core::snn::{
    ensemble_classify, evolve_snn, simulate, BinaryTask, DetectorEnsemble, ScanSchedule, SimConfig, SnnNetwork,
};

use crate::config::{CnnFitness, ExperimentConfig, LONG_RUNNING_EVALUATIONS};
use crate::run::{Run, RunManifest};
use crate::{Cli, CliError, Command, DataCommand, EvolveTarget, GlobalArgs, SamplerCommand, SnnCommand, SplitArg, TrainModel};

fn data_err(e: DataError) -> CliError {
    CliError::Data(e.to_string())
}

fn resolve(g: &GlobalArgs) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::resolve(g.config.as_deref(), &g.sets, g.seed, g.workers)
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if cli.global.workers > 0 {
        // A second build in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.global.workers).build_global();
    }
    let g = &cli.global;
    match &cli.command {
        Command::Data(DataCommand::Inspect { split, images, labels }) => data_inspect(g, *split, images, labels),
        Command::Data(DataCommand::Fetch) => data_fetch(g),
        Command::Train { model } => train(g, *model).map(|_| ()),
        Command::Sampler(SamplerCommand::Validate) => sampler_validate(g).map(|_| ()),
        Command::Evolve { target: EvolveTarget::Cnn } => evolve_cnn(g).map(|_| ()),
        Command::Evolve { target: EvolveTarget::Snn } => evolve_snn_cmd(g).map(|_| ()),
        Command::Snn(SnnCommand::Energy { network, profile }) => {
            snn_energy(g, network.as_deref(), profile.as_deref()).map(|_| ())
        }
        Command::Report { paths } => report(paths),
    }
}

fn split_files(split: Split) -> (&'static str, &'static str) {
    match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }
}

fn load_split(dir: &Path, split: Split) -> Result<(Dataset, PathBuf, PathBuf), CliError> {
    let (i, l) = split_files(split);
    let (ip, lp) = (dir.join(i), dir.join(l));
    let ds = load_idx(&ip, &lp, split).map_err(data_err)?;
    Ok((ds, ip, lp))
}

/// Uniform subsamples of the training and test splits, with manifests.
fn load_subsets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Vec<DatasetManifest>), CliError> {
    let mut out = Vec::new();
    let mut manifests = Vec::new();
    for (split, n) in [(Split::Train, cfg.data.train_images), (Split::Test, cfg.data.eval_images)] {
        let (full, ip, lp) = load_split(&cfg.data.dir, split)?;
        let ds = subsample(&full, n, cfg.seed).map_err(data_err)?;
        manifests.push(DatasetManifest::describe(&ip, &lp, &ds, Some(cfg.seed)).map_err(data_err)?);
        out.push(ds);
    }
    let eval = out.pop().expect("two splits");
    let train = out.pop().expect("two splits");
    Ok((train, eval, manifests))
}

/// Creates the run directory, runs `body` and finalizes the manifest
/// whatever the outcome.
fn with_run<T>(
    g: &GlobalArgs,
    cfg: &ExperimentConfig,
    command: &str,
    datasets: Vec<DatasetManifest>,
    notes: Vec<String>,
    body: impl FnOnce(&Run) -> Result<T, CliError>,
) -> Result<(PathBuf, T), CliError> {
    let mut run = Run::create(&g.out, command, cfg, g.workers)?;
    run.manifest.datasets = datasets;
    run.manifest.notes = notes;
    run.save_manifest()?;
    let result = body(&run);
    run.finish(&result.as_ref().map(|_| ()).map_err(Clone::clone))?;
    println!("run directory: {}", run.dir.display());
    result.map(|v| (run.dir, v))
}

fn data_inspect(g: &GlobalArgs, split: SplitArg, images: &Option<PathBuf>, labels: &Option<PathBuf>) -> Result<(), CliError> {
    let cfg = resolve(g)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let (ip, lp) = match (images, labels) {
        (Some(i), Some(l)) => (i.clone(), l.clone()),
        _ => {
            let (i, l) = split_files(split);
            (cfg.data.dir.join(i), cfg.data.dir.join(l))
        }
    };
    let ds = load_idx(&ip, &lp, split).map_err(data_err)?;
    let manifest = DatasetManifest::describe(&ip, &lp, &ds, None).map_err(data_err)?;
    println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
    Ok(())
}

fn data_fetch(g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = resolve(g)?;
    let mut bad = Vec::new();
    for (name, expected) in MNIST_SHA256 {
        let path = cfg.data.dir.join(name);
        let status = match file_sha256(&path) {
            Ok(h) if h == expected => "ok".to_string(),
            Ok(h) => {
                bad.push(name);
                format!("checksum mismatch: {h}")
            }
            Err(e) => {
                bad.push(name);
                e.to_string()
            }
        };
        println!("{:<26} {status}", name);
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{} of 4 files failed verification in {}; place the uncompressed MNIST files there (no download is attempted)",
            bad.len(),
            cfg.data.dir.display()
        )))
    }
}

fn boltzmann_err(e: BoltzmannError) -> CliError {
    match e {
        BoltzmannError::Data(d) => data_err(d),
        other => CliError::Compute(other.to_string()),
    }
}

/// Trains an RBM or LBM; returns the run directory.
pub fn train(g: &GlobalArgs, model: TrainModel) -> Result<PathBuf, CliError> {
    let cfg = resolve(g)?;
    let (kind, tc, name) = match model {
        TrainModel::Rbm => (ModelKind::Rbm, &cfg.rbm, "train-rbm"),
        TrainModel::Lbm => (ModelKind::Lbm, &cfg.lbm, "train-lbm"),
    };
    tc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (train_ds, eval_ds, manifests) = load_subsets(&cfg)?;
    let hash = cfg.hash();
    let (dir, ()) = with_run(g, &cfg, name, manifests, Vec::new(), |run| {
        run.write("metrics.csv", metrics_csv(&[]).as_bytes())?;
        let mut rows: Vec<EpochMetrics> = Vec::new();
        let mut on_epoch = |_: &boltzmann::BoltzmannModel, m: &EpochMetrics| -> Result<(), BoltzmannError> {
            rows.push(*m);
            println!(
                "epoch {:>3}  accuracy {:.4}  reconstruction_error {:.1}",
                m.epoch, m.accuracy, m.reconstruction_error
            );
            run.write("metrics.csv", metrics_csv(&rows).as_bytes())
                .map_err(|e| BoltzmannError::Checkpoint(e.to_string()))
        };
        let (trained, history) = boltzmann::train(kind, &train_ds, &eval_ds, tc, &mut on_epoch).map_err(boltzmann_err)?;
        let ck = Checkpoint::from_model(&trained, history.len(), tc.seed, &hash);
        run.write("checkpoint.json", ck.to_json().as_bytes())
    })?;
    Ok(dir)
}

fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = String::from(ORACLE_HEADER);
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.model, r.nodes, r.free, r.tv_exact, r.tv_gibbs, r.tv_anneal
        );
    }
    out
}

pub fn sampler_validate(g: &GlobalArgs) -> Result<PathBuf, CliError> {
    let cfg = resolve(g)?;
    cfg.sampler.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let tol = cfg.sampler.tolerance;
    let (dir, ()) = with_run(g, &cfg, "sampler-validate", Vec::new(), Vec::new(), |run| {
        let rows = oracle_suite(&cfg.sampler).map_err(|e| CliError::Compute(e.to_string()))?;
        run.write("oracle.csv", oracle_csv(&rows).as_bytes())?;
        let worst = |f: fn(&OracleRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
        let (e, gb, a) = (worst(|r| r.tv_exact), worst(|r| r.tv_gibbs), worst(|r| r.tv_anneal));
        println!("worst total variation over {} models: exact draws {e:.4}, gibbs {gb:.4}, anneal {a:.4} (tolerance {tol})", rows.len());
        if gb > tol || a > tol {
            return Err(CliError::Compute(format!("sampler exceeds tolerance {tol}: gibbs {gb:.4}, anneal {a:.4}")));
        }
        Ok(())
    })?;
    Ok(dir)
}

#[derive(Serialize)]
struct CnnBest {
    fitness: Option<f64>,
    genome: Genome,
    gene_names: Vec<String>,
    hyper: Option<LeNetHyper>,
    evaluations: usize,
    baseline: Option<CnnBaseline>,
}

#[derive(Serialize)]
struct CnnBaseline {
    hyper: LeNetHyper,
    accuracy: f64,
}

pub fn evolve_cnn(g: &GlobalArgs) -> Result<PathBuf, CliError> {
    let cfg = resolve(g)?;
    let c = &cfg.cnn;
    c.evo.validate().map_err(|e| CliError::Config(e.to_string()))?;
    c.fit.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut notes = Vec::new();
    if c.evo.population * c.evo.generations >= LONG_RUNNING_EVALUATIONS {
        let note = format!(
            "long-running: up to {} network trainings",
            c.evo.population * c.evo.generations
        );
        eprintln!("warning: {note}");
        notes.push(note);
    }
    let (specs, data): (Vec<GeneSpec>, _) = match c.fitness {
        CnnFitness::Lenet => (LeNetHyper::gene_specs(), Some(load_subsets(&cfg)?)),
        CnnFitness::Synthetic => (c.synthetic.specs(), None),
    };
    let manifests = data.as_ref().map(|d| d.2.clone()).unwrap_or_default();
    let score = |genome: &Genome, seed: u64| -> Result<f64, String> {
        match (&data, c.fitness) {
            (Some((tr, ev, _)), CnnFitness::Lenet) => {
                let hyper = LeNetHyper::from_genes(genome.genes()).map_err(|e| e.to_string())?;
                train_and_score(hyper, &FitConfig { seed, ..c.fit.clone() }, tr, ev).map_err(|e| e.to_string())
            }
            _ => Ok(c.synthetic.fitness(genome)),
        }
    };
    let (dir, ()) = with_run(g, &cfg, "evolve-cnn", manifests, notes, |run| {
        let mut observer = |s: &tribench_core::evolution::GenerationStats, snap: &tribench_core::evolution::Snapshot| {
            println!("generation {:>3}  best {:.6}  mean {:.6}  genome {}", s.generation, s.best, s.mean, s.best_genome.to_field());
            // Rewritten each generation so an interrupted run keeps its history.
            let _ = run.write("generations.csv", generations_csv(&snap.history).as_bytes());
        };
        let result = evolve(&specs, &score, &c.evo, &mut observer).map_err(|e| CliError::Compute(e.to_string()))?;
        run.write("generations.csv", generations_csv(&result.history).as_bytes())?;
        let baseline = match (c.baseline, c.fitness) {
            (true, CnnFitness::Lenet) => {
                let genome = Genome(LeNetHyper::BASELINE.to_genes());
                let acc = score(&genome, genome_seed(c.evo.seed, &genome)).map_err(CliError::Compute)?;
                println!("baseline {}  accuracy {acc:.6}", genome.to_field());
                Some(CnnBaseline {
                    hyper: LeNetHyper::BASELINE,
                    accuracy: acc,
                })
            }
            _ => None,
        };
        let best = CnnBest {
            fitness: result.best.fitness,
            hyper: match c.fitness {
                CnnFitness::Lenet => LeNetHyper::from_genes(result.best.genome.genes()).ok(),
                CnnFitness::Synthetic => None,
            },
            genome: result.best.genome.clone(),
            gene_names: specs.iter().map(|s| s.name.clone()).collect(),
            evaluations: result.evaluations,
            baseline,
        };
        println!("best {}  fitness {:?}", best.genome.to_field(), best.fitness);
        run.write("best.json", serde_json::to_string_pretty(&best).expect("serializes").as_bytes())
    })?;
    Ok(dir)
}

#[derive(Serialize)]
struct SnnSummary {
    detectors: Vec<DetectorRow>,
    ensemble_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct DetectorRow {
    digit: u8,
    fitness: f64,
    neurons: usize,
    synapses: usize,
}

pub fn evolve_snn_cmd(g: &GlobalArgs) -> Result<PathBuf, CliError> {
    let cfg = resolve(g)?;
    let s = &cfg.snn;
    s.evo.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut digits = s.digits.clone();
    digits.sort_unstable();
    digits.dedup();
    if digits.is_empty() || digits.len() != s.digits.len() || digits.iter().any(|&d| d > 9) {
        return Err(CliError::Config("snn.digits must list distinct digits 0-9".into()));
    }
    if s.per_class == 0 {
        return Err(CliError::Config("snn.per_class must be at least 1".into()));
    }
    let (train_ds, eval_ds, manifests) = load_subsets(&cfg)?;
    let mut tasks = Vec::new();
    for &d in &s.digits {
        tasks.push(BinaryTask::digit_vs_rest(&train_ds, d, s.per_class, cfg.seed).map_err(|e| CliError::Data(e.to_string()))?);
    }
    let (dir, ()) = with_run(g, &cfg, "evolve-snn", manifests, Vec::new(), |run| {
        let mut detectors = Vec::new();
        let mut rows = Vec::new();
        let mut csv = String::from("digit,fitness,neurons,synapses\n");
        for (&d, task) in s.digits.iter().zip(&tasks) {
            let evo = tribench_core::snn::SnnEvoConfig {
                seed: derive_seed(cfg.seed, &[u64::from(d)]),
                ..s.evo.clone()
            };
            let r = evolve_snn(task, &evo).map_err(|e| CliError::Compute(e.to_string()))?;
            let net = &r.best.network;
            println!("digit {d}  balanced accuracy {:.4}  neurons {}  synapses {}", r.fitness, net.neurons.len(), net.synapses.len());
            run.write(&format!("generations_digit_{d}.csv"), r.generations_csv().as_bytes())?;
            run.write(&format!("networks/digit_{d}.json"), net.to_json().as_bytes())?;
            let _ = writeln!(csv, "{d},{:.6},{},{}", r.fitness, net.neurons.len(), net.synapses.len());
            rows.push(DetectorRow {
                digit: d,
                fitness: r.fitness,
                neurons: net.neurons.len(),
                synapses: net.synapses.len(),
            });
            detectors.push((d, r.best));
        }
        run.write("detectors.csv", csv.as_bytes())?;
        let ensemble_accuracy = if detectors.len() == 10 {
            detectors.sort_by_key(|(d, _)| *d);
            let ens = DetectorEnsemble::new(detectors.into_iter().map(|(_, m)| m).collect())
                .map_err(|e| CliError::Compute(e.to_string()))?;
            ens.save(&run.path("ensemble")).map_err(|e| CliError::Compute(e.to_string()))?;
            let sim = s.evo.sim;
            let correct = eval_ds
                .samples()
                .par_iter()
                .filter(|x| ensemble_classify(&ens, x.pixels(), &sim) == x.label())
                .count();
            let acc = correct as f64 / eval_ds.len() as f64;
            println!("ensemble accuracy {acc:.4} on {} images", eval_ds.len());
            Some(acc)
        } else {
            None
        };
        let summary = SnnSummary {
            detectors: rows,
            ensemble_accuracy,
        };
        run.write("summary.json", serde_json::to_string_pretty(&summary).expect("serializes").as_bytes())
    })?;
    Ok(dir)
}

#[derive(Serialize)]
struct EnergyOutput {
    profile: String,
    network: String,
    images: usize,
    activity: ActivityCounts,
    report: EnergyReport,
}

pub const PER_IMAGE_HEADER: &str = "image,fires,accumulates,synapse_active,delay_stages,total_j,core_j\n";

pub fn snn_energy(g: &GlobalArgs, network: Option<&Path>, profile: Option<&Path>) -> Result<PathBuf, CliError> {
    let cfg = resolve(g)?;
    let prof = match profile {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("profile {}: {e}", p.display())))?;
            EnergyProfile::from_json(&text).map_err(|e| CliError::Config(format!("profile {}: {e}", p.display())))?
        }
        None => EnergyProfile::reference(),
    };
    let sim: SimConfig = cfg.snn.evo.sim;
    sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (net, images, net_name, manifests) = match network {
        Some(p) => {
            let net = SnnNetwork::load(p).map_err(|e| CliError::Config(e.to_string()))?;
            let (_, eval, manifests) = load_subsets(&cfg)?;
            let n = cfg.snn.energy.images.min(eval.len());
            let images: Vec<Vec<f64>> = eval.samples()[..n].iter().map(|s| s.pixels().to_vec()).collect();
            (net, images, p.display().to_string(), manifests)
        }
        None => {
            let (net, images) = reference_setup();
            (net, images, "reference".to_string(), Vec::new())
        }
    };
    if images.is_empty() {
        return Err(CliError::Config("no images to simulate".into()));
    }
    let (dir, ()) = with_run(g, &cfg, "snn-energy", manifests, Vec::new(), |run| {
        run.write("profile.json", prof.to_json().as_bytes())?;
        let mut total = ActivityCounts::default();
        let mut csv = String::from(PER_IMAGE_HEADER);
        for (k, px) in images.iter().enumerate() {
            let (_, a) = simulate(&net, &ScanSchedule::from_pixels(px, sim.scan), &sim);
            let r = account(&a, &prof.phases, &prof.device).map_err(|e| CliError::Compute(e.to_string()))?;
            let _ = writeln!(
                csv,
                "{k},{},{},{},{},{:e},{:e}",
                a.fires, a.accumulates, a.synapse_active, a.delay_stages, r.total, r.core
            );
            total = total.merge(&a);
        }
        let report = account(&total, &prof.phases, &prof.device).map_err(|e| CliError::Compute(e.to_string()))?;
        print!("{}", report.table());
        run.write("per_image.csv", csv.as_bytes())?;
        let out = EnergyOutput {
            profile: prof.name.clone(),
            network: net_name,
            images: images.len(),
            activity: total,
            report,
        };
        run.write("energy.json", serde_json::to_string_pretty(&out).expect("serializes").as_bytes())
    })?;
    Ok(dir)
}

fn run_dirs(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(crate::run::MANIFEST_FILE).is_file() {
            out.push(p.clone());
        } else if let Ok(entries) = std::fs::read_dir(p) {
            let mut dirs: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|d| d.join(crate::run::MANIFEST_FILE).is_file())
                .collect();
            dirs.sort();
            out.extend(dirs);
        }
    }
    out
}

/// One block per run: command, status, config hash and the last row of
/// every CSV it produced.
pub fn report_text(paths: &[PathBuf]) -> Result<String, CliError> {
    let dirs = run_dirs(paths);
    if dirs.is_empty() {
        return Err(CliError::Config("no run directories found".into()));
    }
    let mut out = String::new();
    for d in dirs {
        let m = RunManifest::load(&d)?;
        let _ = writeln!(out, "{}", d.display());
        let _ = writeln!(out, "  command {}  status {}  seed {}  config {}", m.command, m.status, m.seed, &m.config_hash[..12]);
        if let Some(e) = &m.error {
            let _ = writeln!(out, "  error {e}");
        }
        for note in &m.notes {
            let _ = writeln!(out, "  note {note}");
        }
        for f in m.outputs.iter().filter(|f| f.name.ends_with(".csv")) {
            let text = std::fs::read_to_string(d.join(&f.name)).unwrap_or_default();
            let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
            match (lines.first(), lines.len()) {
                (Some(h), n) if n > 1 => {
                    let _ = writeln!(out, "  {}: {} rows, last: {} = {}", f.name, n - 1, h, lines[n - 1]);
                }
                _ => {
                    let _ = writeln!(out, "  {}: no rows", f.name);
                }
            }
        }
    }
    Ok(out)
}

fn report(paths: &[PathBuf]) -> Result<(), CliError> {
    let paths = if paths.is_empty() { vec![PathBuf::from("runs")] } else { paths.to_vec() };
    print!("{}", report_text(&paths)?);
    Ok(())
}
