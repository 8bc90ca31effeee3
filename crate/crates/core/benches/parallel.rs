// Data-parallel hot paths on a one-thread pool against the default pool.
// Build with `--no-default-features` to get the plain sequential code path
// instead; this bench needs the `parallel` feature.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hdrp_core::calibration::{estimate_knots_optimize, KnotTrainingSet, OptimizeOptions};
use hdrp_core::cube::{make_delta_cube, KnotGrid, KnotSource, Tonemap};
use hdrp_core::harness::{generate_samples, validate_model, GenerationConfig, ModelConfig};
use hdrp_core::optim::NelderMeadOptions;
use hdrp_core::scene::MaterialKind;
use rayon::ThreadPool;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("1-thread", one), ("default", all)]
}

fn delta_tonemap(m: usize) -> Tonemap {
    Tonemap::external(
        KnotGrid::default_grid(KnotSource::Delta),
        make_delta_cube(m, 32).unwrap(),
    )
    .unwrap()
}

fn bench_generation(c: &mut Criterion) {
    let tonemap = delta_tonemap(20);
    let cfg = GenerationConfig::new(20_000, 1, MaterialKind::Lambertian);
    let mut group = c.benchmark_group("generate_20k");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| generate_samples(&cfg, &tonemap).unwrap()))
        });
    }
    group.finish();
}

fn bench_validation(c: &mut Criterion) {
    let tonemap = delta_tonemap(20);
    let samples = generate_samples(
        &GenerationConfig::new(20_000, 2, MaterialKind::Lambertian),
        &tonemap,
    )
    .unwrap();
    let config = ModelConfig {
        tonemap,
        ..ModelConfig::default()
    };
    let mut group = c.benchmark_group("validate_20k");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| validate_model(&samples, &config).unwrap()))
        });
    }
    group.finish();
}

fn bench_knot_objective(c: &mut Criterion) {
    let sets: Vec<KnotTrainingSet> = [14, 17, 20]
        .iter()
        .enumerate()
        .map(|(i, &m)| KnotTrainingSet {
            lut: make_delta_cube(m, 32).unwrap(),
            samples: generate_samples(
                &GenerationConfig::new(3000, 10 + i as u64, MaterialKind::Lambertian),
                &delta_tonemap(m),
            )
            .unwrap(),
        })
        .collect();
    let init = KnotGrid::default_grid(KnotSource::Optimized);
    // a fixed evaluation budget, so the bench measures objective throughput
    let opts = OptimizeOptions {
        nelder_mead: NelderMeadOptions {
            max_evaluations: 200,
            restarts: 0,
            ..NelderMeadOptions::default()
        },
        ..OptimizeOptions::default()
    };
    let mut group = c.benchmark_group("knot_objective_200_evals");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| estimate_knots_optimize(&sets, &init, &opts)))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_generation,
    bench_validation,
    bench_knot_objective
);
criterion_main!(benches);
