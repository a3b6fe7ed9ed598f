use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::data::{augment, Dataset, ImageSample, Split, PIXELS};
use crate::rng::rng_from;
use crate::sampling::{exact_distribution, ClampSet, EnergyModel, GibbsConfig, SamplerConfig};

fn random_rbm(visible: usize, hidden: usize, scale: f64, seed: u64) -> RbmModel {
    let mut rng = rng_from(seed);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect() };
    RbmModel {
        weights: Array2::from_shape_vec((visible, hidden), draw(visible * hidden)).unwrap(),
        visible_bias: Array1::from(draw(visible)),
        hidden_bias: Array1::from(draw(hidden)),
    }
}

/// Joint energy model: visible nodes first, hidden nodes after, with the
/// optional hidden-hidden couplings of an LBM.
fn joint_model(base: &RbmModel, hidden_edges: &[(u32, u32)], couplings: &[f64]) -> EnergyModel {
    let (nv, nh) = (base.visible(), base.hidden());
    let mut biases = base.visible_bias.to_vec();
    biases.extend(base.hidden_bias.iter());
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for i in 0..nv {
        for j in 0..nh {
            edges.push((i as u32, (nv + j) as u32));
            weights.push(base.weights[[i, j]]);
        }
    }
    for (&(u, v), &w) in hidden_edges.iter().zip(couplings) {
        edges.push((nv as u32 + u, nv as u32 + v));
        weights.push(w);
    }
    EnergyModel::new(biases, edges, weights).unwrap()
}

fn bits(index: usize, n: usize) -> Vec<f64> {
    (0..n).map(|k| ((index >> k) & 1) as f64).collect()
}

#[test]
fn zero_scale_init_is_all_zero() {
    let m = init_model(ModelKind::Rbm, 5, None, 0.0, 1).unwrap();
    assert!(m.base().weights.iter().all(|&w| w == 0.0));
    let p = hidden_conditional(m.base(), &vec![1.0; AUGMENTED_LEN]).unwrap();
    assert!(p.iter().all(|&x| x == 0.5));
}

#[test]
fn init_is_deterministic_and_scaled() {
    let a = init_model(ModelKind::Rbm, 200, None, 0.01, 9).unwrap();
    let b = init_model(ModelKind::Rbm, 200, None, 0.01, 9).unwrap();
    assert_eq!(a, b);
    let w = &a.base().weights;
    let n = w.len() as f64;
    let mean = w.sum() / n;
    let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((sd - 0.01).abs() < 0.001, "sd {sd}");
    assert!(a.base().visible_bias.iter().chain(&a.base().hidden_bias).all(|&x| x == 0.0));
}

#[test]
fn init_checks_graph_presence() {
    let g = ChimeraGraph::build(1, 1).unwrap();
    assert!(matches!(init_model(ModelKind::Lbm, 8, None, 0.1, 1), Err(BoltzmannError::MissingGraph)));
    assert!(matches!(init_model(ModelKind::Rbm, 8, Some(&g), 0.1, 1), Err(BoltzmannError::UnexpectedGraph)));
    assert!(matches!(init_model(ModelKind::Lbm, 9, Some(&g), 0.1, 1), Err(BoltzmannError::Graph(_))));
    assert!(matches!(init_model(ModelKind::Rbm, 0, None, 0.1, 1), Err(BoltzmannError::NoHidden)));
    let BoltzmannModel::Lbm(m) = init_model(ModelKind::Lbm, 6, Some(&g), 0.1, 1).unwrap() else {
        panic!("expected an LBM");
    };
    assert_eq!(m.couplings.len(), m.graph().edge_count());
    assert_eq!(m.graph().node_count(), 6);
}

#[test]
fn conditionals_match_enumeration() {
    for (nv, nh, seed) in [(4, 3, 1), (5, 4, 2), (6, 6, 3), (3, 9, 4)] {
        let base = random_rbm(nv, nh, 2.0, seed);
        let joint = joint_model(&base, &[], &[]);
        for vi in 0..1usize << nv {
            let v = bits(vi, nv);
            let clamps = ClampSet::from_pairs(v.iter().copied().enumerate());
            let exact = exact_distribution(&joint, &clamps).unwrap().marginals();
            let p = hidden_conditional(&base, &v).unwrap();
            for (a, b) in p.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-12, "hidden: {a} vs {b}");
            }
        }
        for hi in 0..1usize << nh {
            let h = bits(hi, nh);
            let clamps = ClampSet::from_pairs(h.iter().enumerate().map(|(j, &x)| (nv + j, x)));
            let exact = exact_distribution(&joint, &clamps).unwrap().marginals();
            let p = visible_conditional(&base, &h).unwrap();
            for (a, b) in p.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-12, "visible: {a} vs {b}");
            }
        }
    }
}

#[test]
fn conditional_edge_cases() {
    let mut m = RbmModel::zeros(3, 2);
    assert_eq!(hidden_conditional(&m, &[1.0, 0.0, 1.0]).unwrap(), vec![0.5, 0.5]);
    m.visible_bias = Array1::from(vec![-1.0, 0.0, 2.0]);
    let p = visible_conditional(&m, &[0.0, 0.0]).unwrap();
    for (pi, a) in p.iter().zip(&m.visible_bias) {
        assert_eq!(*pi, crate::sampling::sigmoid(*a));
    }
    let mut last = 0.0;
    for w in [0.0, 1.0, 5.0, 20.0, 40.0] {
        m.weights[[0, 1]] = w;
        let p = hidden_conditional(&m, &[1.0, 0.0, 0.0]).unwrap()[1];
        assert!(p >= last);
        last = p;
    }
    assert!(last > 1.0 - 1e-12);
    assert!(matches!(hidden_conditional(&m, &[1.0]), Err(BoltzmannError::Dimension(_))));
    assert!(matches!(visible_conditional(&m, &[1.0]), Err(BoltzmannError::Dimension(_))));
}

#[test]
fn cd_with_zero_rate_is_identity() {
    let mut m = random_rbm(6, 3, 0.5, 5);
    let before = m.clone();
    let batch = Array2::from_shape_fn((4, 6), |(r, c)| ((r + c) % 2) as f64);
    cd_step(&mut m, batch.view(), 0.0, 1, 7).unwrap();
    assert_eq!(m, before);
    assert!(matches!(cd_step(&mut m, batch.view(), 0.1, 0, 7), Err(BoltzmannError::ZeroK)));
    let empty = Array2::<f64>::zeros((0, 6));
    assert!(matches!(cd_step(&mut m, empty.view(), 0.1, 1, 7), Err(BoltzmannError::EmptyBatch)));
}

#[test]
fn cd_learns_a_repeated_vector() {
    let mut rng = rng_from(11);
    let v: Vec<f64> = (0..AUGMENTED_LEN).map(|_| if rng.random::<f64>() < 0.2 { 1.0 } else { 0.0 }).collect();
    let batch = Array2::from_shape_fn((10, AUGMENTED_LEN), |(_, c)| v[c]);
    let BoltzmannModel::Rbm(mut m) = init_model(ModelKind::Rbm, 20, None, 0.01, 3).unwrap() else {
        unreachable!()
    };
    let first = cd_step(&mut m, batch.view(), 0.05, 1, 100).unwrap().reconstruction_error;
    let mut last = first;
    for s in 1..200 {
        last = cd_step(&mut m, batch.view(), 0.05, 1, 100 + s).unwrap().reconstruction_error;
    }
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

/// Exact log-likelihood gradient of a small RBM by enumerating all states.
fn exact_gradient(base: &RbmModel, data: &Array2<f64>) -> Vec<f64> {
    let (nv, nh) = (base.visible(), base.hidden());
    let joint = joint_model(base, &[], &[]);
    let dist = exact_distribution(&joint, &ClampSet::new()).unwrap();
    let mut model_vh = Array2::<f64>::zeros((nv, nh));
    let mut model_v = Array1::<f64>::zeros(nv);
    let mut model_h = Array1::<f64>::zeros(nh);
    for (idx, &p) in dist.probs().iter().enumerate() {
        let s = bits(idx, nv + nh);
        for i in 0..nv {
            model_v[i] += p * s[i];
            for j in 0..nh {
                model_vh[[i, j]] += p * s[i] * s[nv + j];
            }
        }
        for j in 0..nh {
            model_h[j] += p * s[nv + j];
        }
    }
    let n = data.nrows() as f64;
    let mut data_vh = Array2::<f64>::zeros((nv, nh));
    let mut data_h = Array1::<f64>::zeros(nh);
    for row in data.rows() {
        let ph = hidden_conditional(base, row.as_slice().unwrap()).unwrap();
        for j in 0..nh {
            data_h[j] += ph[j] / n;
            for i in 0..nv {
                data_vh[[i, j]] += row[i] * ph[j] / n;
            }
        }
    }
    let data_v = data.sum_axis(ndarray::Axis(0)) / n;
    (data_vh - model_vh)
        .iter()
        .chain((data_v - model_v).iter())
        .chain((data_h - model_h).iter())
        .copied()
        .collect()
}

#[test]
fn cd_gradient_signs_match_exact_gradient() {
    let patterns = [[1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0], [1.0, 1.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
    for seed in 0..5 {
        let base = random_rbm(4, 3, 1.0, 40 + seed);
        let data = Array2::from_shape_fn((4, 4), |(r, c)| patterns[r][c]);
        let exact = exact_gradient(&base, &data);
        let big = Array2::from_shape_fn((40_000, 4), |(r, c)| patterns[r % 4][c]);
        let g = cd_gradients(&base, big.view(), 1, 1000 + seed).unwrap();
        let cd: Vec<f64> = g.weights.iter().chain(&g.visible_bias).chain(&g.hidden_bias).copied().collect();
        let agree = exact.iter().zip(&cd).filter(|(a, b)| a.signum() == b.signum()).count();
        assert!(agree as f64 >= 0.9 * exact.len() as f64, "seed {seed}: {agree}/{}", exact.len());
    }
}

fn gibbs(sweeps: usize) -> SamplerConfig {
    SamplerConfig::Gibbs(GibbsConfig {
        sweeps,
        chains: 1,
        burn_in: 2,
    })
}

fn small_lbm(visible: usize, hidden: usize, scale: f64, seed: u64) -> LbmModel {
    let g = ChimeraGraph::for_hidden_size(hidden).unwrap();
    match init_model_with_visible(ModelKind::Lbm, visible, hidden, Some(&g), scale, seed).unwrap() {
        BoltzmannModel::Lbm(m) => m,
        BoltzmannModel::Rbm(_) => unreachable!(),
    }
}

#[test]
fn lbm_with_zero_rates_is_identity_after_randomization() {
    let mut m = small_lbm(12, 16, 0.3, 2);
    let before = m.clone();
    let cfg = TrainConfig {
        lr_vh: 0.0,
        lr_hh: 0.0,
        sampler: gibbs(3),
        ..TrainConfig::default()
    };
    let batch = Array2::from_shape_fn((3, 12), |(r, c)| ((r * c) % 3 == 0) as u8 as f64);
    lbm_step(&mut m, batch.view(), &cfg, 4, 5).unwrap();
    assert_eq!(m, before);
    assert!(matches!(lbm_step(&mut m, batch.view(), &cfg, 0, 5), Err(BoltzmannError::Config(_))));
}

#[test]
fn early_epochs_redraw_couplings() {
    let mut m = small_lbm(8, 800, 0.01, 3);
    assert!(m.couplings.len() >= 1600);
    let cfg = TrainConfig {
        sampler: gibbs(1),
        ..TrainConfig::default()
    };
    let batch = Array2::from_shape_fn((2, 8), |(r, c)| ((r + c) % 2) as f64);
    for epoch in 1..=3 {
        let before = m.couplings.clone();
        lbm_step(&mut m, batch.view(), &cfg, epoch, 20 + epoch as u64).unwrap();
        let n = before.len() as f64;
        let (ma, mb) = (before.iter().sum::<f64>() / n, m.couplings.iter().sum::<f64>() / n);
        let cov: f64 = before.iter().zip(&m.couplings).map(|(a, b)| (a - ma) * (b - mb)).sum();
        let va: f64 = before.iter().map(|a| (a - ma).powi(2)).sum();
        let vb: f64 = m.couplings.iter().map(|b| (b - mb).powi(2)).sum();
        let rho = cov / (va * vb).sqrt();
        assert!(rho.abs() < 0.1, "epoch {epoch}: rho {rho}");
        let sd = (vb / n).sqrt();
        assert!((sd - 0.01).abs() < 0.002, "sd {sd}");
    }
    assert_eq!(m.couplings.len(), m.graph().edge_count());
}

#[test]
fn coupling_updates_stay_on_graph_edges() {
    let mut m = small_lbm(10, 24, 0.1, 4);
    let cfg = TrainConfig {
        sampler: gibbs(4),
        randomize_hh_epochs: 0,
        lr_hh: 0.5,
        ..TrainConfig::default()
    };
    let batch = Array2::from_shape_fn((5, 10), |(r, c)| ((r + 2 * c) % 3 == 0) as u8 as f64);
    let before = m.couplings.clone();
    for s in 0..5 {
        lbm_step(&mut m, batch.view(), &cfg, 1, s).unwrap();
    }
    assert_eq!(m.couplings.len(), m.graph().edge_count());
    assert_ne!(m.couplings, before);
}

#[test]
fn uncoupled_lbm_tracks_rbm_exactly() {
    for sampler in [
        gibbs(3),
        SamplerConfig::Anneal(crate::sampling::AnnealConfig {
            schedule: vec![0.5, 1.0],
            reads: 3,
        }),
    ] {
        let mut lbm = small_lbm(30, 24, 0.1, 6);
        lbm.couplings.iter_mut().for_each(|u| *u = 0.0);
        let mut rbm = lbm.base.clone();
        let cfg = TrainConfig {
            sampler,
            randomize_hh_epochs: 0,
            lr_hh: 0.0,
            ..TrainConfig::default()
        };
        let mut rng = rng_from(8);
        for step in 0..6 {
            let batch = Array2::from_shape_fn((4, 30), |_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 });
            let a = lbm_step(&mut lbm, batch.view(), &cfg, 1, step).unwrap();
            let b = rbm_sampler_step(&mut rbm, batch.view(), &cfg, step).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(lbm.base, rbm);
        assert!(lbm.couplings.iter().all(|&u| u == 0.0));
    }
}

fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = rng_from(seed);
    let samples = (0..n)
        .map(|i| {
            let label = (i % 10) as u8;
            let pixels = (0..PIXELS)
                .map(|p| {
                    let on = (p / 78) == label as usize;
                    let flip = rng.random::<f64>() < 0.05;
                    if on != flip {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            ImageSample::new(pixels, label).unwrap()
        })
        .collect();
    Dataset::new(samples, Split::Train).unwrap()
}

#[test]
fn zero_model_classifies_as_zero() {
    let ds = synthetic_dataset(3, 1);
    let rbm = init_model(ModelKind::Rbm, 4, None, 0.0, 1).unwrap();
    let g = ChimeraGraph::build(1, 1).unwrap();
    let lbm = init_model(ModelKind::Lbm, 8, Some(&g), 0.0, 1).unwrap();
    let opts = ClassifyOptions::default();
    for s in ds.samples() {
        assert_eq!(classify(&rbm, s, &opts, 1).unwrap(), 0);
    }
    // LBM label probabilities are sample averages of exactly 0.5.
    assert_eq!(classify(&lbm, &ds.samples()[1], &opts, 1).unwrap(), 0);
}

#[test]
fn dominant_label_bias_wins() {
    let ds = synthetic_dataset(10, 2);
    for kind in [ModelKind::Rbm, ModelKind::Lbm] {
        let g = ChimeraGraph::build(1, 1).unwrap();
        let graph = (kind == ModelKind::Lbm).then_some(&g);
        let mut m = init_model(kind, 8, graph, 0.05, 3).unwrap();
        for k in 0..10 {
            m.base_mut().visible_bias[PIXELS + k] = if k == 7 { 10.0 } else { -10.0 };
        }
        let opts = ClassifyOptions {
            sampler: gibbs(1),
            reads: 16,
        };
        for (i, s) in ds.samples().iter().enumerate() {
            assert_eq!(classify(&m, s, &opts, i as u64).unwrap(), 7);
        }
    }
}

/// Exact label marginals with the pixels clamped, by enumeration.
fn exact_label_marginals(joint: &EnergyModel, pixels: &[f64]) -> Vec<f64> {
    let clamps = ClampSet::from_pairs(pixels.iter().copied().enumerate());
    let m = exact_distribution(joint, &clamps).unwrap().marginals();
    m[..10].to_vec()
}

fn top_two_gap(p: &[f64]) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] - s[1]
}

#[test]
fn classification_agrees_with_exact_posterior() {
    let mut checked = 0;
    for seed in 0..30 {
        let base = random_rbm(14, 2, 1.0, 300 + seed);
        let joint = joint_model(&base, &[], &[]);
        let mut rng = rng_from(seed);
        let pixels: Vec<f64> = (0..4).map(|_| rng.random_range(0..2) as f64).collect();
        let exact = exact_label_marginals(&joint, &pixels);
        if top_two_gap(&exact) < 0.05 {
            continue;
        }
        checked += 1;
        let model = BoltzmannModel::Rbm(base);
        let got = classify_pixels(&model, &pixels, &ClassifyOptions::default(), 0).unwrap();
        assert_eq!(got, argmax(&exact), "seed {seed}");
    }
    assert!(checked >= 10);

    // Coupled hidden layer: sampled label probabilities against enumeration.
    let mut checked = 0;
    for seed in 0..10 {
        let mut lbm = small_lbm(14, 6, 1.5, 500 + seed);
        let mut rng = rng_from(900 + seed);
        lbm.base.visible_bias.iter_mut().for_each(|a| *a = rng.random::<f64>() * 4.0 - 2.0);
        let joint = joint_model(&lbm.base, lbm.graph().edges(), &lbm.couplings);
        let pixels = vec![1.0, 0.0, 1.0, 1.0];
        let exact = exact_label_marginals(&joint, &pixels);
        let model = BoltzmannModel::Lbm(lbm);
        let opts = ClassifyOptions {
            sampler: gibbs(1),
            reads: 20_000,
        };
        let sampled = label_probabilities(&model, &pixels, &opts, seed).unwrap();
        for (a, b) in sampled.iter().zip(&exact) {
            assert!((a - b).abs() < 0.02, "seed {seed}: {a} vs {b}");
        }
        if top_two_gap(&exact) >= 0.05 {
            checked += 1;
            assert_eq!(classify_pixels(&model, &pixels, &opts, seed).unwrap(), argmax(&exact));
        }
    }
    assert!(checked >= 3);
}

fn argmax(p: &[f64]) -> u8 {
    let mut best = 0;
    for k in 1..p.len() {
        if p[k] > p[best] {
            best = k;
        }
    }
    best as u8
}

#[test]
fn zero_model_reconstruction_error_is_quarter_per_unit() {
    let img = ImageSample::new(vec![0.0; PIXELS], 3).unwrap();
    let rows = Array2::from_shape_vec((1, AUGMENTED_LEN), augment(&img, true).into_inner()).unwrap();
    let opts = ClassifyOptions::default();
    let rbm = init_model(ModelKind::Rbm, 50, None, 0.0, 1).unwrap();
    assert_eq!(reconstruction_error_rows(&rbm, rows.view(), &opts, 1).unwrap(), 198.5);
    let g = ChimeraGraph::build(2, 2).unwrap();
    let lbm = init_model(ModelKind::Lbm, 30, Some(&g), 0.0, 1).unwrap();
    assert_eq!(reconstruction_error_rows(&lbm, rows.view(), &opts, 1).unwrap(), 198.5);
}

#[test]
fn identity_model_reconstructs_binary_inputs() {
    let n = AUGMENTED_LEN;
    let mut m = RbmModel::zeros(n, n);
    for i in 0..n {
        m.weights[[i, i]] = 80.0;
    }
    m.visible_bias.fill(-40.0);
    m.hidden_bias.fill(-40.0);
    let ds = synthetic_dataset(5, 3);
    let err = reconstruction_error(&BoltzmannModel::Rbm(m), &ds, &ClassifyOptions::default(), 0).unwrap();
    assert!(err < 1e-20, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reconstruction_error_grows_with_data(seed in 0u64..1000, n in 1usize..6) {
        let ds = synthetic_dataset(6, seed);
        let m = init_model(ModelKind::Rbm, 6, None, 0.1, seed).unwrap();
        let opts = ClassifyOptions::default();
        let small = reconstruction_error(&m, &ds.take(n), &opts, 0).unwrap();
        let large = reconstruction_error(&m, &ds.take(n + 1), &opts, 0).unwrap();
        prop_assert!(small >= 0.0);
        prop_assert!(large >= small);
    }

    #[test]
    fn conditionals_are_probabilities(seed in 0u64..1000, scale in 0.0f64..20.0) {
        let m = random_rbm(7, 5, scale, seed);
        let v: Vec<f64> = (0..7).map(|i| ((seed >> i) & 1) as f64).collect();
        for p in hidden_conditional(&m, &v).unwrap() {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let g = ChimeraGraph::for_hidden_size(20).unwrap();
    for model in [
        init_model(ModelKind::Rbm, 7, None, 0.3, 1).unwrap(),
        init_model(ModelKind::Lbm, 20, Some(&g), 0.3, 2).unwrap(),
    ] {
        let first = Checkpoint::from_model(&model, 4, 77, "abc").to_json();
        let loaded = Checkpoint::from_json(&first).unwrap().to_model().unwrap();
        assert_eq!(loaded, model);
        let second = Checkpoint::from_model(&loaded, 4, 77, "abc").to_json();
        assert_eq!(first, second);
    }
    let mut bad = Checkpoint::from_model(&init_model(ModelKind::Rbm, 2, None, 0.1, 1).unwrap(), 0, 0, "");
    bad.version = 99;
    assert!(matches!(bad.to_model(), Err(BoltzmannError::Checkpoint(_))));
    let mut bad = Checkpoint::from_model(&init_model(ModelKind::Rbm, 2, None, 0.1, 1).unwrap(), 0, 0, "");
    bad.weights.pop();
    assert!(bad.to_model().is_err());
    assert!(Checkpoint::from_json("{\"format\":1}").is_err());
}

#[test]
fn zero_epochs_returns_initial_model() {
    let ds = synthetic_dataset(20, 1);
    let cfg = TrainConfig {
        epochs: 0,
        hidden: 10,
        ..TrainConfig::default()
    };
    let (model, metrics) = train(ModelKind::Rbm, &ds, &ds, &cfg, &mut |_, _| Ok(())).unwrap();
    assert!(metrics.is_empty());
    let init = init_model(ModelKind::Rbm, 10, None, cfg.init_scale, crate::rng::derive_seed(cfg.seed, &[0])).unwrap();
    assert_eq!(model, init);
}

#[test]
fn training_is_deterministic_and_learns_synthetic_classes() {
    let train_ds = synthetic_dataset(200, 5);
    let eval_ds = synthetic_dataset(100, 6);
    for kind in [ModelKind::Rbm, ModelKind::Lbm] {
        let cfg = TrainConfig {
            epochs: 6,
            hidden: 32,
            batch_size: 20,
            sampler: if kind == ModelKind::Lbm { gibbs(2) } else { SamplerConfig::Cd { k: 1 } },
            classify_reads: 32,
            randomize_hh_epochs: 1,
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let (m1, h1) = train(kind, &train_ds, &eval_ds, &cfg, &mut |_, m| {
            seen.push(m.epoch);
            Ok(())
        })
        .unwrap();
        let (m2, h2) = train(kind, &train_ds, &eval_ds, &cfg, &mut |_, _| Ok(())).unwrap();
        assert_eq!(seen, (1..=6).collect::<Vec<_>>());
        assert_eq!(m1, m2);
        assert_eq!(metrics_csv(&h1), metrics_csv(&h2));
        let last = h1.last().unwrap();
        assert!(last.accuracy > 0.8, "{kind:?}: {last:?}");
        assert!(last.reconstruction_error < h1[0].reconstruction_error);
    }
}

#[test]
fn config_validation() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        TrainConfig { hidden: 0, ..ok.clone() },
        TrainConfig { lr_vh: -1.0, ..ok.clone() },
        TrainConfig { lr_hh: f64::NAN, ..ok.clone() },
        TrainConfig { epochs: 2, ..ok.clone() },
        TrainConfig { batch_size: 0, ..ok.clone() },
        TrainConfig { momentum: 1.0, ..ok.clone() },
        TrainConfig { sampler: SamplerConfig::Cd { k: 0 }, ..ok.clone() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    let csv = metrics_csv(&[EpochMetrics { epoch: 1, accuracy: 0.5, reconstruction_error: 2.0 }]);
    assert!(csv.starts_with('#'));
    assert!(csv.ends_with("epoch,accuracy,reconstruction_error\n1,0.500000,2.000000\n"));
}
