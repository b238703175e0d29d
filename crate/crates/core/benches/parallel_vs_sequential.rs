use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tfg_observer::immersion::{direction_table, immerse};
use tfg_observer::parallel::{par_map, seq_map};
use tfg_observer::reconstruct::{error_metric, Reconstructor};
use tfg_observer::sampling::random_group_element;
use tfg_observer::scenarios::{
    build_slam_mot_spec, run_scenario, ScenarioConfig, ScenarioId, SLAM_LANDMARKS,
};

fn sweep_configs(n: u64) -> Vec<ScenarioConfig> {
    (0..n)
        .map(|seed| {
            let mut cfg = ScenarioConfig::new(ScenarioId::Slam);
            cfg.duration = 2.0;
            cfg.step = 0.01;
            cfg.seed = seed;
            cfg.decimate = 100;
            cfg.gramian.enabled = false;
            cfg.init.rotation_deg = 175.0;
            cfg.init.w_offset = 100.0;
            cfg
        })
        .collect()
}

fn seed_sweep(c: &mut Criterion) {
    let cfgs = sweep_configs(8);
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("rayon", cfgs.len()), |b| {
        b.iter(|| par_map(&cfgs, |c| run_scenario(c).unwrap().summary.final_err_metric))
    });
    group.bench_function(BenchmarkId::new("sequential", cfgs.len()), |b| {
        b.iter(|| seq_map(&cfgs, |c| run_scenario(c).unwrap().summary.final_err_metric))
    });
    group.finish();
}

/// Worst error of one chunk of perturbed reconstructions.
fn monte_carlo_chunk(seed: &u64) -> f64 {
    let spec = build_slam_mot_spec(&SLAM_LANDMARKS).unwrap();
    let table = direction_table(&spec);
    let rec = Reconstructor::from_table(&table, spec.case).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
    let mut worst: f64 = 0.0;
    for _ in 0..250 {
        let t = random_group_element(&mut rng, spec.dims, 10.0);
        let z = immerse(&t, &table, spec.case).zbar_matrix();
        let noise = DMatrix::from_fn(z.nrows(), z.ncols(), |_, _| rng.random_range(-0.1..0.1));
        let out = rec.solve(&(z + noise)).unwrap();
        worst = worst.max(error_metric(&out.estimate, &t, spec.case));
    }
    worst
}

fn monte_carlo(c: &mut Criterion) {
    let chunks: Vec<u64> = (0..16).collect();
    let mut group = c.benchmark_group("monte_carlo_reconstruction");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("rayon", 4000), |b| {
        b.iter(|| par_map(&chunks, monte_carlo_chunk))
    });
    group.bench_function(BenchmarkId::new("sequential", 4000), |b| {
        b.iter(|| seq_map(&chunks, monte_carlo_chunk))
    });
    group.finish();
}

criterion_group!(benches, seed_sweep, monte_carlo);
criterion_main!(benches);
