use proptest::prelude::*;
use rand::Rng;

use super::evolve::mutate;
use super::*;
use crate::data::{IMAGE_SIDE, PIXELS};
use crate::rng::rng_from;

fn chain(weight: f64, delay: u32) -> SnnNetwork {
    SnnNetwork {
        neurons: vec![Neuron { threshold: 0.5 }, Neuron { threshold: 0.5 }],
        synapses: vec![Synapse {
            pre: 0,
            post: 1,
            weight,
            delay,
        }],
        inputs: vec![0],
        output: 1,
    }
}

/// Charge 1.0 on scan line 0 at step 0 only.
fn pulse() -> Vec<f64> {
    let mut px = vec![0.0; PIXELS];
    px[0] = 1.0;
    px
}

fn random_pixels(seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..PIXELS).map(|_| if rng.random::<f64>() < 0.3 { rng.random() } else { 0.0 }).collect()
}

fn sched(px: &[f64]) -> ScanSchedule {
    ScanSchedule::from_pixels(px, Scan::Columns)
}

fn random_net(seed: u64) -> SnnNetwork {
    let mut rng = rng_from(seed);
    let hidden = rng.random_range(5..=20);
    random_network(hidden, &InitConfig::default(), &mut rng)
}

#[test]
fn chain_fires_after_the_delay() {
    let (trace, counts) = simulate(&chain(1.0, 3), &sched(&pulse()), &SimConfig::default());
    assert_eq!(trace.events, vec![Spike { time: 0, neuron: 0 }, Spike { time: 3, neuron: 1 }]);
    assert_eq!(counts.fires, 2);
    assert_eq!(counts.accumulates, 2);
    assert_eq!(counts.synapse_active, 1);
    assert_eq!(counts.delay_stages, 3);
    assert!(counts.validate().is_ok());
}

#[test]
fn inert_network_only_idles() {
    let net = SnnNetwork {
        neurons: vec![Neuron { threshold: f64::INFINITY }; 30],
        synapses: vec![],
        inputs: (0..28).collect(),
        output: 29,
    };
    let cfg = SimConfig::default();
    let (trace, a) = simulate(&net, &sched(&vec![0.0; PIXELS]), &cfg);
    assert!(trace.events.is_empty());
    assert_eq!(a.fires + a.accumulates + a.synapse_active + a.delay_stages + a.neuron_active_slots, 0);
    assert_eq!(a.neuron_idle_slots, 30 * 56);
    let (trace, a) = simulate(&net, &sched(&random_pixels(1)), &cfg);
    assert!(trace.events.is_empty());
    assert_eq!(a.fires, 0);
}

#[test]
fn unreachable_thresholds_silence_the_network() {
    let mut net = random_net(3);
    // No neuron can collect more than every injection plus every positive
    // weight arriving at every step.
    let bound = 28.0 + net.synapses.iter().map(|s| s.weight.max(0.0)).sum::<f64>() * 56.0;
    for n in &mut net.neurons {
        n.threshold = 2.0 * bound;
    }
    let (trace, _) = simulate(&net, &sched(&random_pixels(4)), &SimConfig::default());
    assert!(trace.events.is_empty());
}

#[test]
fn row_scan_transposes_the_image() {
    let mut px = vec![0.0; PIXELS];
    px[3 * IMAGE_SIDE + 7] = 0.25;
    let cols = ScanSchedule::from_pixels(&px, Scan::Columns);
    let rows = ScanSchedule::from_pixels(&px, Scan::Rows);
    assert_eq!(cols.charge(7, 3), 0.25);
    assert_eq!(rows.charge(3, 7), 0.25);
    assert_eq!(cols.steps(), 28);
}

#[test]
fn three_neuron_detector_counts_dark_pixels() {
    let net = SnnNetwork {
        neurons: vec![Neuron { threshold: 1e-9 }, Neuron { threshold: 0.5 }, Neuron { threshold: 0.5 }],
        synapses: vec![
            Synapse { pre: 0, post: 1, weight: 1.0, delay: 1 },
            Synapse { pre: 1, post: 2, weight: 1.0, delay: 1 },
        ],
        inputs: vec![0],
        output: 2,
    };
    let det = Detector {
        network: net,
        baseline: Baseline::default(),
    };
    let cfg = SimConfig::default();
    for seed in 0..5 {
        let px = random_pixels(seed);
        let dark = px[..IMAGE_SIDE].iter().filter(|&&p| p > 0.0).count();
        assert_eq!(detector_score(&det, &px, &cfg), dark as f64);
        assert_eq!(detector_score(&det, &px, &cfg), detector_score(&det, &px, &cfg));
    }
    let inert = Detector {
        baseline: Baseline { offset: 2.5, scale: 2.0 },
        network: SnnNetwork {
            synapses: vec![],
            ..det.network.clone()
        },
    };
    assert_eq!(detector_score(&inert, &random_pixels(9), &cfg), -1.25);
}

fn inert_detector() -> Detector {
    Detector {
        network: SnnNetwork {
            neurons: vec![Neuron { threshold: 1.0 }; 2],
            synapses: vec![],
            inputs: vec![0],
            output: 1,
        },
        baseline: Baseline::default(),
    }
}

#[test]
fn ensemble_ties_go_low_and_dominance_wins() {
    let cfg = SimConfig::default();
    let mut members = vec![inert_detector(); 10];
    let ens = DetectorEnsemble::new(members.clone()).unwrap();
    assert_eq!(ensemble_classify(&ens, &random_pixels(1), &cfg), 0);
    members[7].baseline.offset = -100.0;
    let ens = DetectorEnsemble::new(members.clone()).unwrap();
    assert_eq!(ensemble_classify(&ens, &random_pixels(1), &cfg), 7);
    assert!(DetectorEnsemble::new(members[..9].to_vec()).is_err());
    let dir = tempfile::tempdir().unwrap();
    ens.save(dir.path()).unwrap();
    assert_eq!(DetectorEnsemble::load(dir.path()).unwrap(), ens);
}

#[test]
fn baseline_fit_finds_threshold_and_polarity() {
    let (b, ba) = fit_baseline(&[0, 1, 5, 6], &[false, false, true, true]);
    assert_eq!(ba, 1.0);
    assert_eq!(b.offset, 1.5);
    assert!(b.scale > 0.0);
    let (b, ba) = fit_baseline(&[4, 4, 0, 1], &[false, false, true, true]);
    assert_eq!(ba, 1.0);
    assert!(b.scale < 0.0);
    assert!(b.score(0) > 0.0 && b.score(4) < 0.0);
    assert_eq!(fit_baseline(&[2, 2, 2, 2], &[true, false, true, false]).1, 0.5);
    assert_eq!(balanced_accuracy(&[true, true, true, false], &[true, true, false, false]), 0.75);
}

#[test]
fn network_json_round_trips_and_validates() {
    let net = random_net(5);
    assert_eq!(SnnNetwork::from_json(&net.to_json()).unwrap(), net);
    let mut bad = net.clone();
    bad.synapses[0].delay = 0;
    assert!(bad.validate().is_err());
    let mut bad = net.clone();
    bad.output = 1000;
    assert!(bad.validate().is_err());
    assert!(SnnNetwork::from_json(&net.to_json().replace("tribench-snn", "other")).is_err());
    assert!(SimConfig { horizon: 27, ..SimConfig::default() }.validate().is_err());
}

#[test]
fn pathological_weights_saturate() {
    let mut net = chain(f64::INFINITY, 1);
    net.synapses.push(Synapse { pre: 0, post: 1, weight: f64::MAX, delay: 1 });
    net.neurons[1].threshold = f64::INFINITY;
    let (trace, _) = simulate(&net, &sched(&pulse()), &SimConfig::default());
    assert!(trace.saturated);
}

fn toy_task() -> BinaryTask {
    let mut images = Vec::new();
    let mut positive = Vec::new();
    for k in 0..10 {
        let level = 0.6 + 0.04 * k as f64;
        images.push(vec![level; PIXELS]);
        positive.push(true);
        images.push(vec![0.0; PIXELS]);
        positive.push(false);
    }
    BinaryTask { images, positive }
}

#[test]
fn separable_toy_task_is_solved() {
    let cfg = SnnEvoConfig {
        population: 50,
        generations: 20,
        seed: 3,
        ..SnnEvoConfig::default()
    };
    let r = evolve_snn(&toy_task(), &cfg).unwrap();
    assert_eq!(r.fitness, 1.0);
    assert!(r.history.len() <= 21);
}

#[test]
fn evolution_is_elitist_and_stagnates_without_mutation() {
    let task = toy_task();
    let cfg = SnnEvoConfig {
        population: 12,
        generations: 6,
        init: InitConfig { density: 0.02, ..InitConfig::default() },
        ..SnnEvoConfig::default()
    };
    let r = evolve_snn(&task, &cfg).unwrap();
    assert!(r.initial.iter().all(|&f| r.fitness >= f));
    assert!(r.history.windows(2).all(|w| w[1].best >= w[0].best));
    let frozen = evolve_snn(&task, &SnnEvoConfig { mutation: MutationRates::none(), ..cfg.clone() }).unwrap();
    assert!(frozen.history.iter().all(|s| s.best == frozen.history[0].best));
    let again = evolve_snn(&task, &SnnEvoConfig { workers: 1, ..cfg.clone() }).unwrap();
    assert_eq!(again, r);
    assert!(r.generations_csv().starts_with(SNN_GENERATIONS_HEADER));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn counts_match_trace(seed in 0u64..10_000) {
        let net = random_net(seed);
        let px = random_pixels(seed ^ 1);
        let cfg = SimConfig::default();
        let (trace, a) = simulate(&net, &sched(&px), &cfg);
        prop_assert!(a.validate().is_ok());
        prop_assert_eq!(a.fires as usize, trace.events.len());
        prop_assert_eq!(trace.counts.iter().map(|&c| c as usize).sum::<usize>(), trace.events.len());
        prop_assert!(trace.events.iter().all(|s| (s.time as usize) < cfg.horizon));
        prop_assert!(trace.events.windows(2).all(|w| w[0] < w[1]));
        // Nonzero deliveries: injections plus arrivals of nonzero weights.
        let injections = (0..28).flat_map(|t| (0..28).map(move |i| (t, i))).filter(|&(t, i)| px[i * 28 + t] != 0.0).count();
        let arrivals: usize = trace.events.iter().map(|s| {
            net.synapses.iter().filter(|y| y.pre == s.neuron as usize && y.weight != 0.0 && (s.time + y.delay) < cfg.horizon as u32).count()
        }).sum();
        prop_assert_eq!(a.accumulates as usize, injections + arrivals);
        prop_assert_eq!(simulate(&net, &sched(&px), &cfg).0, trace);
    }

    #[test]
    fn zero_weight_synapses_do_not_change_the_trace(seed in 0u64..10_000, pre in 0usize..30, post in 0usize..30, delay in 1u32..9) {
        let net = random_net(seed);
        let px = random_pixels(seed ^ 2);
        let cfg = SimConfig::default();
        let mut extra = net.clone();
        extra.synapses.insert(seed as usize % (net.synapses.len() + 1), Synapse { pre, post, weight: 0.0, delay });
        prop_assert_eq!(simulate(&net, &sched(&px), &cfg).0, simulate(&extra, &sched(&px), &cfg).0);
    }

    #[test]
    fn synapse_cannot_act_before_its_delay(seed in 0u64..10_000, delay in 1u32..9, w in 0.1f64..3.0) {
        // Input 0 drives neuron `hidden` only through one delayed synapse,
        // so that neuron's first fire cannot precede input 0's first fire
        // plus the delay, and removing the input spike removes the effect.
        let mut net = random_net(seed);
        let target = net.neurons.len();
        net.neurons.push(Neuron { threshold: 0.05 });
        net.synapses.retain(|s| s.post != target);
        net.synapses.push(Synapse { pre: 0, post: target, weight: w, delay });
        let mut px = random_pixels(seed);
        px[0] = 1.0;
        net.neurons[0].threshold = 0.5;
        let cfg = SimConfig::default();
        let (trace, _) = simulate(&net, &sched(&px), &cfg);
        let first_pre = trace.events.iter().find(|s| s.neuron == 0).map(|s| s.time).unwrap();
        let first_post = trace.events.iter().find(|s| s.neuron as usize == target).map(|s| s.time);
        prop_assert_eq!(first_post, Some(first_pre + delay));
        // Silence neuron 0 entirely: the target must never fire.
        net.neurons[0].threshold = f64::INFINITY;
        let (quiet, _) = simulate(&net, &sched(&px), &cfg);
        prop_assert!(quiet.events.iter().all(|s| s.neuron as usize != target));
        // Other neurons agree until neuron 0's earliest effect can arrive.
        let reach = first_pre + net.synapses.iter().filter(|s| s.pre == 0).map(|s| s.delay).min().unwrap();
        let early = |t: &SpikeTrace| -> Vec<Spike> { t.events.iter().copied().filter(|s| s.neuron != 0 && s.time < reach).collect() };
        prop_assert_eq!(early(&quiet), early(&trace));
    }

    #[test]
    fn mutants_stay_valid(seed in 0u64..10_000) {
        let mut net = random_net(seed);
        let mut rng = rng_from(seed);
        let rates = MutationRates { add_neuron: 0.5, remove_neuron: 0.5, ..MutationRates::default() };
        for _ in 0..30 {
            mutate(&mut net, &rates, &InitConfig::default(), &mut rng);
            prop_assert!(net.validate().is_ok());
            prop_assert_eq!(net.inputs.len(), 28);
        }
    }
}
