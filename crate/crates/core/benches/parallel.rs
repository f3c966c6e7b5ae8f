//! Rayon pool versus a single-thread pool on the two hottest kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfvi_core::functionals::{psi_profile, PsiOptions};
use mfvi_core::measure::{Grid1D, ProductMeasure};
use mfvi_core::model::{catalog, Model, QuadraticModel};
use mfvi_core::sde::{mkv_step, ParticleCloud, SdeConfig};
use rayon::ThreadPoolBuilder;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("rayon", ThreadPoolBuilder::new().build().unwrap()),
        ("sequential", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
    ]
}

fn bench_mkv_step(c: &mut Criterion) {
    let model: Model = QuadraticModel::new(vec![vec![1.0, 0.5], vec![0.5, 1.0]], vec![0.0, 0.0])
        .unwrap()
        .into();
    let g = Grid1D::new(-8.0, 8.0, 512).unwrap();
    let nu = ProductMeasure::gaussian(&[g, g], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
    let cfg = SdeConfig::default();
    let cloud = ParticleCloud::sample(&nu, cfg.n_particles, 1).unwrap();
    let opts = PsiOptions::default();
    let mut group = c.benchmark_group("mkv_step");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| mkv_step(&model, &cloud, &[g, g], &cfg, 0, &opts).unwrap()))
        });
    }
    group.finish();
}

fn bench_black_box_psi(c: &mut Criterion) {
    let model = catalog::build("double_well", 3, 0.3).unwrap();
    let g = Grid1D::new(-4.0, 4.0, 64).unwrap();
    let nu = ProductMeasure::gaussian(&[g, g, g], &[(0.0, 1.0); 3]).unwrap();
    let opts = PsiOptions::default();
    let mut group = c.benchmark_group("black_box_psi");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| psi_profile(&model, 0, &nu, &opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_mkv_step, bench_black_box_psi);
criterion_main!(benches);
