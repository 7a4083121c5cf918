use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gridmpc_core::diffusion::{generate, make_schedule, Denoiser, DenoiserShape, SampleOptions};
use gridmpc_core::exec::Execution;
use gridmpc_core::forecaster::{featurize, fit, FeatureSpec, ForestConfig};
use gridmpc_core::tscore::{gen_synthetic, Capacities};

fn forest_fit(c: &mut Criterion) {
    let ds = gen_synthetic(1, 7, Capacities::default()).unwrap();
    let (x, y) = featurize(&ds.load, FeatureSpec::default()).unwrap();
    let cfg = ForestConfig { trees: 100, seed: 3, ..Default::default() };
    let mut g = c.benchmark_group("forest_fit");
    g.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &e| {
            b.iter(|| fit(&x, &y, &cfg, e).unwrap())
        });
    }
    g.finish();
}

fn diffusion_generate(c: &mut Criterion) {
    let sched = make_schedule(100, 1e-4, 0.1).unwrap();
    let den = Denoiser::init(DenoiserShape::default(), 7).unwrap();
    let mut g = c.benchmark_group("diffusion_generate");
    g.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let opts = SampleOptions { exec, ..Default::default() };
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &opts, |b, o| {
            b.iter(|| generate(&den, &sched, 16, 5, o))
        });
    }
    g.finish();
}

criterion_group!(benches, forest_fit, diffusion_generate);
criterion_main!(benches);
