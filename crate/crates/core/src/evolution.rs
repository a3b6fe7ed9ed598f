//! Integer-genome evolutionary search with parallel, cached fitness
//! evaluation.
//!
//! Each generation is evaluated, then replaced by elites plus offspring of
//! parents selected from the top of the ranking. All randomness for
//! generation `g` comes from `derive_seed(seed, [g])`, and every fitness
//! call receives a seed derived from the run seed and the genome alone, so
//! results do not depend on worker count or evaluation order.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, hash_i64s, rng_from, WorkbenchRng};

#[derive(Debug, Error, PartialEq)]
pub enum EvoError {
    #[error("no genes specified")]
    NoGenes,
    #[error("gene {name}: empty range [{lo}, {hi}]")]
    EmptyRange { name: String, lo: i64, hi: i64 },
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error("genome has {got} genes, expected {expected}")]
    GenomeLength { got: usize, expected: usize },
    #[error("gene {name} = {value} outside [{lo}, {hi}]")]
    GeneRange { name: String, value: i64, lo: i64, hi: i64 },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSpec {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
}

impl GeneSpec {
    pub fn new(name: &str, lo: i64, hi: i64) -> Self {
        Self {
            name: name.to_string(),
            lo,
            hi,
        }
    }

    fn draw(&self, rng: &mut WorkbenchRng) -> i64 {
        rng.random_range(self.lo..=self.hi)
    }
}

pub fn validate_specs(specs: &[GeneSpec]) -> Result<(), EvoError> {
    if specs.is_empty() {
        return Err(EvoError::NoGenes);
    }
    for s in specs {
        if s.lo > s.hi {
            return Err(EvoError::EmptyRange {
                name: s.name.clone(),
                lo: s.lo,
                hi: s.hi,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genome(pub Vec<i64>);

impl Genome {
    pub fn genes(&self) -> &[i64] {
        &self.0
    }

    pub fn validate(&self, specs: &[GeneSpec]) -> Result<(), EvoError> {
        if self.0.len() != specs.len() {
            return Err(EvoError::GenomeLength {
                got: self.0.len(),
                expected: specs.len(),
            });
        }
        for (&value, s) in self.0.iter().zip(specs) {
            if value < s.lo || value > s.hi {
                return Err(EvoError::GeneRange {
                    name: s.name.clone(),
                    value,
                    lo: s.lo,
                    hi: s.hi,
                });
            }
        }
        Ok(())
    }

    /// Genes joined with `;`.
    pub fn to_field(&self) -> String {
        self.0.iter().map(i64::to_string).collect::<Vec<_>>().join(";")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: Option<f64>,
    /// Why fitness evaluation failed, if it did.
    pub diagnostic: Option<String>,
}

impl Individual {
    pub fn new(genome: Genome) -> Self {
        Self {
            genome,
            fitness: None,
            diagnostic: None,
        }
    }

    fn score(&self) -> f64 {
        self.fitness.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Selection {
    /// Parents drawn uniformly from the top `fraction` of the ranking.
    Truncation { fraction: f64 },
    /// Each parent is the best of `size` uniform draws from the population.
    Tournament { size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    pub selection: Selection,
    pub crossover: f64,
    /// Per-gene mutation probability; `None` means `1 / genes`.
    pub mutation: Option<f64>,
    pub elite: usize,
    /// Fitness assigned to failed evaluations; `None` means negative
    /// infinity.
    pub failure_fitness: Option<f64>,
    /// Concurrent fitness evaluations; 0 uses every available core.
    pub workers: usize,
    pub seed: u64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 50,
            selection: Selection::Truncation { fraction: 0.25 },
            crossover: 0.9,
            mutation: None,
            elite: 1,
            failure_fitness: None,
            workers: 0,
            seed: 1,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<(), EvoError> {
        let bad = |m: &str| Err(EvoError::Config(m.to_string()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if self.elite == 0 || self.elite >= self.population {
            return bad("elite must satisfy 1 <= elite < population");
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return bad("crossover probability outside [0, 1]");
        }
        if let Some(m) = self.mutation {
            if !(0.0..=1.0).contains(&m) {
                return bad("mutation probability outside [0, 1]");
            }
        }
        match self.selection {
            Selection::Truncation { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                bad("truncation fraction outside (0, 1]")
            }
            Selection::Tournament { size: 0 } => bad("tournament size must be at least 1"),
            _ => Ok(()),
        }
    }

    fn mutation_rate(&self, genes: usize) -> f64 {
        self.mutation.unwrap_or(1.0 / genes as f64)
    }

    fn failure(&self) -> f64 {
        self.failure_fitness.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Uniform random valid genomes.
pub fn init_population(specs: &[GeneSpec], cfg: &EvoConfig) -> Result<Vec<Individual>, EvoError> {
    validate_specs(specs)?;
    cfg.validate()?;
    let mut rng = rng_from(derive_seed(cfg.seed, &[u64::MAX]));
    Ok((0..cfg.population)
        .map(|_| Individual::new(Genome(specs.iter().map(|s| s.draw(&mut rng)).collect())))
        .collect())
}

/// Seed handed to the fitness function for `genome`.
pub fn genome_seed(run_seed: u64, genome: &Genome) -> u64 {
    derive_seed(run_seed, &[hash_i64s(genome.genes())])
}

/// Memoized fitness results keyed by genome.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenomeCache {
    entries: HashMap<Genome, Result<f64, String>>,
    /// Fitness-function calls made so far.
    pub evaluations: usize,
}

impl GenomeCache {
    pub fn get(&self, genome: &Genome) -> Option<&Result<f64, String>> {
        self.entries.get(genome)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, EvoError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvoError::Pool(e.to_string()))
}

/// Assigns fitness to every individual. Genomes missing from the cache are
/// evaluated once each, concurrently on `pool`; failures score
/// `cfg.failure_fitness` and keep their message as a diagnostic.
pub fn evaluate<F>(
    population: &mut [Individual],
    fitness: &F,
    cfg: &EvoConfig,
    cache: &mut GenomeCache,
    pool: &rayon::ThreadPool,
) where
    F: Fn(&Genome, u64) -> Result<f64, String> + Sync,
{
    let mut fresh: Vec<Genome> = population
        .iter()
        .map(|i| i.genome.clone())
        .filter(|g| cache.get(g).is_none())
        .collect();
    fresh.sort();
    fresh.dedup();
    let results: Vec<Result<f64, String>> = pool.install(|| {
        fresh
            .par_iter()
            .map(|g| match fitness(g, genome_seed(cfg.seed, g)) {
                Ok(f) if f.is_nan() => Err("fitness is NaN".to_string()),
                other => other,
            })
            .collect()
    });
    cache.evaluations += fresh.len();
    cache.entries.extend(fresh.into_iter().zip(results));
    for ind in population.iter_mut() {
        match cache.get(&ind.genome).expect("every genome evaluated") {
            Ok(f) => {
                ind.fitness = Some(*f);
                ind.diagnostic = None;
            }
            Err(msg) => {
                ind.fitness = Some(cfg.failure());
                ind.diagnostic = Some(msg.clone());
            }
        }
    }
}

impl PartialOrd for Genome {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Genome {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.cmp(&other.0)
    }
}

/// Indices by descending fitness; ties keep population order.
fn ranking(population: &[Individual]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..population.len()).collect();
    idx.sort_by(|&a, &b| population[b].score().total_cmp(&population[a].score()));
    idx
}

/// Elites copied unchanged, the rest bred by selection, uniform crossover
/// and per-gene uniform resampling.
pub fn next_generation(
    population: &[Individual],
    specs: &[GeneSpec],
    cfg: &EvoConfig,
    rng: &mut WorkbenchRng,
) -> Vec<Individual> {
    let ranked = ranking(population);
    let mut next: Vec<Individual> = ranked[..cfg.elite.min(ranked.len())]
        .iter()
        .map(|&i| population[i].clone())
        .collect();
    let pool_size = match cfg.selection {
        Selection::Truncation { fraction } => ((fraction * population.len() as f64).ceil() as usize).clamp(1, ranked.len()),
        Selection::Tournament { .. } => ranked.len(),
    };
    let parents = &ranked[..pool_size];
    let pick = |rng: &mut WorkbenchRng| -> usize {
        match cfg.selection {
            Selection::Truncation { .. } => *parents.choose(rng).expect("non-empty pool"),
            Selection::Tournament { size } => (0..size)
                .map(|_| rng.random_range(0..population.len()))
                .min_by(|&a, &b| population[b].score().total_cmp(&population[a].score()).then(a.cmp(&b)))
                .expect("tournament size at least 1"),
        }
    };
    let mutation = cfg.mutation_rate(specs.len());
    while next.len() < cfg.population {
        let a = &population[pick(rng)].genome;
        let b = &population[pick(rng)].genome;
        let mut child: Vec<i64> = if rng.random::<f64>() < cfg.crossover {
            a.0.iter()
                .zip(&b.0)
                .map(|(&x, &y)| if rng.random::<bool>() { x } else { y })
                .collect()
        } else {
            a.0.clone()
        };
        for (gene, spec) in child.iter_mut().zip(specs) {
            if rng.random::<f64>() < mutation {
                *gene = spec.draw(rng);
            }
        }
        next.push(Individual::new(Genome(child)));
    }
    next
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub std: f64,
    pub best_genome: Genome,
    pub best_so_far: f64,
    pub failures: usize,
}

fn stats(generation: usize, population: &[Individual], best_so_far: f64) -> GenerationStats {
    let top = &population[ranking(population)[0]];
    let scores: Vec<f64> = population.iter().map(Individual::score).collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    GenerationStats {
        generation,
        best: top.score(),
        mean,
        std,
        best_genome: top.genome.clone(),
        best_so_far: best_so_far.max(top.score()),
        failures: population.iter().filter(|i| i.diagnostic.is_some()).count(),
    }
}

pub const GENERATIONS_HEADER: &str = "generation,best,mean,std,best_genome\n";

pub fn generations_csv(history: &[GenerationStats]) -> String {
    let mut out = String::from(GENERATIONS_HEADER);
    for s in history {
        let _ = writeln!(out, "{},{},{},{},{}", s.generation, s.best, s.mean, s.std, s.best_genome.to_field());
    }
    out
}

/// Everything needed to continue a run after generation `generation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub generation: usize,
    /// Population to evaluate next.
    pub population: Vec<Individual>,
    pub best: Option<Individual>,
    pub history: Vec<GenerationStats>,
    pub cache: Vec<(Genome, Result<f64, String>)>,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvoResult {
    pub best: Individual,
    pub history: Vec<GenerationStats>,
    /// Fitness-function calls; cache hits excluded.
    pub evaluations: usize,
}

/// Runs the full search.
pub fn evolve<F>(
    specs: &[GeneSpec],
    fitness: &F,
    cfg: &EvoConfig,
    observer: &mut dyn FnMut(&GenerationStats, &Snapshot),
) -> Result<EvoResult, EvoError>
where
    F: Fn(&Genome, u64) -> Result<f64, String> + Sync,
{
    let population = init_population(specs, cfg)?;
    resume(
        specs,
        fitness,
        cfg,
        Snapshot {
            generation: 0,
            population,
            best: None,
            history: Vec::new(),
            cache: Vec::new(),
            evaluations: 0,
        },
        observer,
    )
}

/// Continues from a snapshot; a run resumed from any generation's snapshot
/// finishes identically to an uninterrupted one.
pub fn resume<F>(
    specs: &[GeneSpec],
    fitness: &F,
    cfg: &EvoConfig,
    snapshot: Snapshot,
    observer: &mut dyn FnMut(&GenerationStats, &Snapshot),
) -> Result<EvoResult, EvoError>
where
    F: Fn(&Genome, u64) -> Result<f64, String> + Sync,
{
    validate_specs(specs)?;
    cfg.validate()?;
    for ind in &snapshot.population {
        ind.genome.validate(specs)?;
    }
    let pool = worker_pool(cfg.workers)?;
    let Snapshot {
        generation: start,
        mut population,
        mut best,
        mut history,
        cache,
        evaluations,
    } = snapshot;
    let mut cache = GenomeCache {
        entries: cache.into_iter().collect(),
        evaluations,
    };
    for g in start..cfg.generations {
        evaluate(&mut population, fitness, cfg, &mut cache, &pool);
        let prev = best.as_ref().map_or(f64::NEG_INFINITY, Individual::score);
        let s = stats(g, &population, prev);
        let top = &population[ranking(&population)[0]];
        if best.is_none() || top.score() > prev {
            best = Some(top.clone());
        }
        history.push(s.clone());
        let next = if g + 1 < cfg.generations {
            next_generation(&population, specs, cfg, &mut rng_from(derive_seed(cfg.seed, &[g as u64])))
        } else {
            population.clone()
        };
        population = next;
        let mut entries: Vec<_> = cache.entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let snap = Snapshot {
            generation: g + 1,
            population: population.clone(),
            best: best.clone(),
            history: history.clone(),
            cache: entries,
            evaluations: cache.evaluations,
        };
        observer(&s, &snap);
    }
    let best = match best {
        Some(b) => b,
        None => {
            evaluate(&mut population, fitness, cfg, &mut cache, &pool);
            population[ranking(&population)[0]].clone()
        }
    };
    Ok(EvoResult {
        best,
        history,
        evaluations: cache.evaluations,
    })
}

/// Task with a known optimum: fitness is minus the squared distance to
/// `target`, so the optimum scores 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTask {
    pub target: Vec<i64>,
    pub lo: i64,
    pub hi: i64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            target: vec![3, 17, 29, 0, 12],
            lo: 0,
            hi: 31,
        }
    }
}

impl SyntheticTask {
    pub fn specs(&self) -> Vec<GeneSpec> {
        (0..self.target.len())
            .map(|i| GeneSpec::new(&format!("g{i}"), self.lo, self.hi))
            .collect()
    }

    pub fn fitness(&self, genome: &Genome) -> f64 {
        -genome
            .genes()
            .iter()
            .zip(&self.target)
            .map(|(a, b)| ((a - b) * (a - b)) as f64)
            .sum::<f64>()
    }
}
