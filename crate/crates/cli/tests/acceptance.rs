//! Acceptance suite: one line per criterion, `PASS` or `FAIL`, with the
//! measured values and runtime. Exits non-zero if any criterion fails.
//!
//! MNIST is read from `$MNIST_DIR` (default `data/mnist` at the workspace
//! root). Heavy criteria train at full budget, so a complete run takes
//! about an hour on one core.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;

use tribench::run::RunManifest;
use tribench_core::boltzmann::{train, ModelKind, TrainConfig};
use tribench_core::chimera::{expected_edge_count, ChimeraGraph};
use tribench_core::cnn::{gradient_check, CnnModel, LeNetHyper};
use tribench_core::data::{load_idx, subsample, Dataset, ImageSample, Split, PIXELS};
use tribench_core::energy::{account, power_from_energy, ActivityCounts, EnergyProfile, Phase, PHASES};
use tribench_core::evolution::{evolve, EvoConfig, SyntheticTask};
use tribench_core::rng::rng_from;
use tribench_core::sampling::{oracle_suite, GibbsConfig, OracleConfig, SamplerConfig};
use tribench_core::snn::{evolve_snn, random_network, simulate, BinaryTask, InitConfig, ScanSchedule, SimConfig, SnnEvoConfig};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist(split: Split) -> Result<Dataset, String> {
    let d = mnist_dir();
    let (i, l) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    load_idx(&d.join(i), &d.join(l), split).map_err(|e| format!("MNIST unavailable in {}: {e}", d.display()))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sampler_oracle() -> Outcome {
    let rows = oracle_suite(&OracleConfig::default()).map_err(|e| e.to_string())?;
    let gibbs = rows.iter().map(|r| r.tv_gibbs).fold(0.0, f64::max);
    let anneal = rows.iter().map(|r| r.tv_anneal).fold(0.0, f64::max);
    let free = rows.iter().map(|r| r.free).max().unwrap_or(0);
    check(
        rows.len() == 20 && free <= 16 && gibbs <= 0.02 && anneal <= 0.02,
        format!("{} models, max free {free}, worst tv gibbs {gibbs:.4}, anneal {anneal:.4} (<= 0.02)", rows.len()),
    )
}

/// Final (accuracy, reconstruction error) and the epoch-1 accuracy.
fn boltzmann_run(kind: ModelKind, seed: u64, gibbs: bool) -> Result<(f64, f64, f64), String> {
    let train_ds = subsample(&mnist(Split::Train)?, 6000, seed).map_err(|e| e.to_string())?;
    let eval_ds = subsample(&mnist(Split::Test)?, 1000, seed).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if gibbs {
        cfg.sampler = SamplerConfig::Gibbs(GibbsConfig::default());
    }
    let (_, history) = train(kind, &train_ds, &eval_ds, &cfg, &mut |_, _| Ok(())).map_err(|e| e.to_string())?;
    let (first, last) = (history.first().ok_or("no epochs")?, history.last().ok_or("no epochs")?);
    Ok((first.accuracy, last.accuracy, last.reconstruction_error))
}

fn rbm_trend() -> Outcome {
    let mut passed = 0;
    let mut detail = Vec::new();
    for seed in 1..=3 {
        let cfg = TrainConfig::default();
        if (cfg.hidden, cfg.epochs) != (200, 25) || cfg.sampler != SamplerConfig::default() {
            return Err("default training config is not H=200, 25 epochs, CD-1".into());
        }
        let (first, last, _) = boltzmann_run(ModelKind::Rbm, seed, false)?;
        let ok = (0.30..=0.60).contains(&first) && last >= 0.84;
        passed += usize::from(ok);
        detail.push(format!("seed {seed}: {first:.3} -> {last:.3}"));
    }
    check(passed >= 2, format!("{} ({passed}/3 in [0.30,0.60] -> >= 0.84)", detail.join(", ")))
}

fn lbm_ordering() -> Outcome {
    let mut error_wins = 0;
    let mut accuracy_ok = true;
    let mut detail = Vec::new();
    for seed in 1..=3 {
        let (_, rbm_acc, rbm_err) = boltzmann_run(ModelKind::Rbm, seed, true)?;
        let (_, lbm_acc, lbm_err) = boltzmann_run(ModelKind::Lbm, seed, true)?;
        error_wins += usize::from(lbm_err < rbm_err);
        accuracy_ok &= lbm_acc >= rbm_acc - 0.02;
        detail.push(format!("seed {seed}: error {lbm_err:.0} vs {rbm_err:.0}, accuracy {lbm_acc:.3} vs {rbm_acc:.3}"));
    }
    check(
        error_wins >= 2 && accuracy_ok,
        format!("LBM vs RBM, {} (error lower in {error_wins}/3)", detail.join("; ")),
    )
}

fn chimera_structure() -> Outcome {
    for m in 1..=8 {
        for n in 1..=8 {
            let g = ChimeraGraph::build(m, n).map_err(|e| e.to_string())?;
            let edges = 16 * m * n + 4 * m * (n - 1) + 4 * (m - 1) * n;
            if g.node_count() != 8 * m * n || g.edge_count() != edges || expected_edge_count(m, n) != edges {
                return Err(format!("({m},{n}): {} nodes, {} edges", g.node_count(), g.edge_count()));
            }
        }
    }
    let g = ChimeraGraph::build(5, 5).map_err(|e| e.to_string())?;
    check(g.node_count() == 200, format!("64 grids match; build(5,5) has {} nodes", g.node_count()))
}

fn cnn_gradients() -> Outcome {
    let mut model = CnnModel::build(LeNetHyper::new(3, 2, 3, 2, 16), 5).map_err(|e| e.to_string())?;
    let mut rng = rng_from(6);
    model.params_mut().iter_mut().for_each(|p| *p += 0.05 * (rng.random::<f64>() - 0.5));
    let images: Vec<ImageSample> = (0..4)
        .map(|i| ImageSample::new((0..PIXELS).map(|_| rng.random::<f64>()).collect(), i as u8).unwrap())
        .collect();
    let x = model.image_matrix(&images).map_err(|e| e.to_string())?;
    let labels: Vec<u8> = images.iter().map(ImageSample::label).collect();
    let r = gradient_check(&mut model, x.view(), &labels, 300, 7);
    check(
        r.checked >= 200 && r.max_rel_error <= 1e-4,
        format!("{} parameters checked ({} at kinks skipped), max relative error {:.2e} (<= 1e-4)", r.checked, r.skipped, r.max_rel_error),
    )
}

fn ea_convergence() -> Outcome {
    let task = SyntheticTask::default();
    let specs = task.specs();
    let mut solved = 0;
    for seed in 0..10 {
        let cfg = EvoConfig {
            population: 50,
            generations: 50,
            seed,
            ..EvoConfig::default()
        };
        let r = evolve(&specs, &|g, _| Ok(task.fitness(g)), &cfg, &mut |_, _| {}).map_err(|e| e.to_string())?;
        if r.history.windows(2).any(|w| w[1].best_so_far < w[0].best_so_far) {
            return Err(format!("seed {seed}: best-so-far decreased"));
        }
        solved += usize::from(r.best.fitness == Some(0.0));
    }
    check(solved >= 9, format!("{solved}/10 seeds reach fitness 0, best-so-far monotone"))
}

fn tribench(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_tribench")).args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    } else {
        Err(format!("tribench {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn only_run(out: &Path) -> Result<PathBuf, String> {
    let dirs: Vec<PathBuf> = std::fs::read_dir(out).map_err(|e| e.to_string())?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    match dirs.as_slice() {
        [d] => Ok(d.clone()),
        _ => Err(format!("expected one run in {}, found {}", out.display(), dirs.len())),
    }
}

fn desk_lenet_search() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = format!("data.dir={}", mnist_dir().display());
    tribench(&[
        "evolve", "cnn",
        "--out", tmp.path().to_str().unwrap(),
        "--set", &data,
        "--set", "data.train_images=2000",
        "--set", "data.eval_images=1000",
        "--set", "cnn.evo.population=16",
        "--set", "cnn.evo.generations=8",
    ])?;
    let best: Value = serde_json::from_slice(&std::fs::read(only_run(tmp.path())?.join("best.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let acc = best["fitness"].as_f64().ok_or("no best fitness")?;
    let base = best["baseline"]["accuracy"].as_f64().ok_or("no baseline")?;
    check(
        acc >= 0.92 && acc >= base,
        format!("best {acc:.4} (genome {}) vs baseline (5,20,5,50,500) {base:.4}", best["genome"]),
    )
}

fn toy_task() -> BinaryTask {
    let mut images = Vec::new();
    let mut positive = Vec::new();
    for k in 0..10 {
        images.push(vec![0.6 + 0.04 * k as f64; PIXELS]);
        positive.push(true);
        images.push(vec![0.0; PIXELS]);
        positive.push(false);
    }
    BinaryTask { images, positive }
}

fn snn_evolution() -> Outcome {
    let train_ds = mnist(Split::Train)?;
    let mut passed = 0;
    let mut detail = Vec::new();
    for seed in 1..=3 {
        let task = BinaryTask::digit_vs_rest(&train_ds, 0, 100, seed).map_err(|e| e.to_string())?;
        let cfg = SnnEvoConfig {
            population: 100,
            generations: 100,
            seed,
            ..SnnEvoConfig::default()
        };
        let r = evolve_snn(&task, &cfg).map_err(|e| e.to_string())?;
        passed += usize::from(r.fitness >= 0.80);
        detail.push(format!("seed {seed}: {:.3}", r.fitness));
    }
    let toy = evolve_snn(
        &toy_task(),
        &SnnEvoConfig {
            population: 50,
            generations: 20,
            seed: 3,
            ..SnnEvoConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    check(
        passed >= 2 && toy.fitness == 1.0,
        format!("digit 0 balanced accuracy {} ({passed}/3 >= 0.80); toy task {:.3}", detail.join(", "), toy.fitness),
    )
}

fn energy_identities() -> Outcome {
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let total = power_from_energy(18.26e-9, 16.67e6);
    let core = power_from_energy(5.24e-9, 16.67e6);
    let prof = EnergyProfile::reference();

    // Dark input: nothing is injected, so only idle and passive phases accrue.
    let mut rng = rng_from(11);
    let net = random_network(20, &InitConfig::default(), &mut rng);
    let sim = SimConfig::default();
    let (_, a) = simulate(&net, &ScanSchedule::from_pixels(&[0.0; PIXELS], sim.scan), &sim);
    let r = account(&a, &prof.phases, &prof.device).map_err(|e| e.to_string())?;
    let cycles = sim.horizon as f64;
    let idle_only = prof.phases.get(Phase::NeuronIdle) * (net.neurons.len() as f64 * cycles)
        + prof.phases.get(Phase::SynapsePassive) * (net.synapses.len() as f64 * cycles);
    let silent = a.fires == 0 && a.accumulates == 0 && a.delay_stages == 0 && r.total == idle_only;

    // Doubling every count of a consistent activity doubles the energy.
    let (net, stimuli) = tribench_core::energy::reference_setup();
    let one = stimuli
        .iter()
        .map(|px| simulate(&net, &ScanSchedule::from_pixels(px, sim.scan), &sim).1)
        .fold(ActivityCounts::default(), |acc, a| acc.merge(&a));
    let two = one.merge(&one);
    let e1 = account(&one, &prof.phases, &prof.device).map_err(|e| e.to_string())?.total;
    let e2 = account(&two, &prof.phases, &prof.device).map_err(|e| e.to_string())?.total;
    let by_phase: f64 = PHASES.iter().map(|&p| prof.phases.get(p) * one.count(p) as f64).sum();
    let linear = rel(e2, 2.0 * e1).max(rel(e1, by_phase));

    check(
        rel(total, 304.3e-3) <= 1e-3 && rel(core, 87.43e-3) <= 5e-3 && silent && linear <= 1e-12,
        format!(
            "{:.2} mW, {:.2} mW; silent network {:.3e} J idle-only {}; linearity error {linear:.1e}",
            total * 1e3,
            core * 1e3,
            r.total,
            if silent { "exact" } else { "MISMATCH" }
        ),
    )
}

/// Every output except the manifest (timestamps) and the stored config
/// (records the worker count).
fn outputs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let m = RunManifest::load(dir).map_err(|e| e.to_string())?;
    if m.status != "ok" {
        return Err(format!("{}: status {}", dir.display(), m.status));
    }
    m.outputs
        .iter()
        .filter(|f| f.name != "config.toml")
        .map(|f| Ok((f.name.clone(), std::fs::read(dir.join(&f.name)).map_err(|e| e.to_string())?)))
        .collect()
}

fn determinism() -> Outcome {
    let data = format!("data.dir={}", mnist_dir().display());
    let small = ["--set", "data.train_images=300", "--set", "data.eval_images=100"];
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("train rbm", vec!["train", "rbm", "--set", "rbm.hidden=32", "--set", "rbm.epochs=2", "--set", "rbm.randomize_hh_epochs=0"]),
        ("train lbm", vec!["train", "lbm", "--set", "lbm.hidden=32", "--set", "lbm.epochs=4", "--set", "lbm.sampler.sweeps=1"]),
        ("sampler validate", vec!["sampler", "validate", "--set", "sampler.models=3", "--set", "sampler.samples=20000", "--set", "sampler.tolerance=0.1"]),
        (
            "evolve cnn",
            vec![
                "evolve", "cnn",
                "--set", "cnn.evo.population=4",
                "--set", "cnn.evo.generations=2",
                "--set", "cnn.fit.epochs=1",
            ],
        ),
        (
            "evolve snn",
            vec![
                "evolve", "snn",
                "--set", "snn.per_class=10",
                "--set", "snn.evo.population=8",
                "--set", "snn.evo.generations=3",
            ],
        ),
        ("snn energy", vec!["snn", "energy"]),
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for (k, (name, args)) in commands.iter().enumerate() {
        let mut runs = Vec::new();
        for (rep, workers) in ["1", "2", "2"].iter().enumerate() {
            let out = tmp.path().join(format!("{k}-{rep}"));
            let mut full = args.clone();
            full.extend(["--workers", workers, "--out", out.to_str().unwrap(), "--set", &data]);
            full.extend(small);
            tribench(&full)?;
            let dir = only_run(&out)?;
            runs.push((RunManifest::load(&dir).map_err(|e| e.to_string())?.config_hash, outputs(&dir)?));
        }
        if runs.iter().any(|r| r != &runs[0]) {
            return Err(format!("{name}: outputs differ across reruns or worker counts"));
        }
        detail.push(format!("{name} ({} files)", runs[0].1.len()));
    }
    Ok(format!("byte-identical with --workers 1/2/2: {}", detail.join(", ")))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "sampler oracle equivalence", budget: Duration::from_secs(120), run: sampler_oracle },
        Criterion { id: 2, name: "RBM trend reproduction", budget: Duration::from_secs(45 * 60), run: rbm_trend },
        Criterion { id: 3, name: "LBM vs RBM ordering", budget: Duration::MAX, run: lbm_ordering },
        Criterion { id: 4, name: "Chimera structure", budget: Duration::from_secs(1), run: chimera_structure },
        Criterion { id: 5, name: "CNN gradient fidelity", budget: Duration::from_secs(60), run: cnn_gradients },
        Criterion { id: 6, name: "EA convergence", budget: Duration::from_secs(10), run: ea_convergence },
        Criterion { id: 7, name: "desk-scale LeNet evolution", budget: Duration::from_secs(2 * 3600), run: desk_lenet_search },
        Criterion { id: 8, name: "SNN evolution", budget: Duration::from_secs(30 * 60), run: snn_evolution },
        Criterion { id: 9, name: "energy identities", budget: Duration::from_secs(1), run: energy_identities },
        Criterion { id: 10, name: "determinism suite", budget: Duration::from_secs(10 * 60), run: determinism },
    ];
    let only: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over runtime budget {:?}", c.budget)),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {:<28} {}  {detail}  [{:.1}s]",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
