use tribench_core::energy::{account, ActivityCounts, EnergyProfile};
use tribench_core::snn::{evolve_snn, simulate, BinaryTask, ScanSchedule, SimConfig, SnnEvoConfig};
use tribench_core::data::PIXELS;

fn ramp(level: f64) -> Vec<f64> {
    (0..PIXELS).map(|p| level * ((p % 28) as f64 / 27.0)).collect()
}

#[test]
fn evolved_detector_activity_prices_additively() {
    let task = BinaryTask {
        images: (0..8).map(|k| ramp(if k % 2 == 0 { 1.0 } else { 0.1 })).collect(),
        positive: (0..8).map(|k| k % 2 == 0).collect(),
    };
    let cfg = SnnEvoConfig {
        population: 16,
        generations: 4,
        ..SnnEvoConfig::default()
    };
    let r = evolve_snn(&task, &cfg).unwrap();
    assert!(r.fitness >= r.initial.iter().cloned().fold(0.0, f64::max));
    let prof = EnergyProfile::reference();
    let sim = SimConfig::default();
    let mut total = ActivityCounts::default();
    let mut per_image = 0.0;
    for px in &task.images {
        let (trace, a) = simulate(&r.best.network, &ScanSchedule::from_pixels(px, sim.scan), &sim);
        assert_eq!(trace.events.len() as u64, a.fires);
        per_image += account(&a, &prof.phases, &prof.device).unwrap().total;
        total = total.merge(&a);
    }
    let report = account(&total, &prof.phases, &prof.device).unwrap();
    assert_eq!(report.runs, 8);
    assert!((report.total - per_image).abs() <= 1e-12 * report.total);
    assert!(report.core < report.total);
}
