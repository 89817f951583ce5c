use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sepqmm::model::KernelKind;
use sepqmm::parallel::{map_indexed, map_indexed_sequential};
use sepqmm::sampler::ChainConfig;
use sepqmm::simstudy::{
    apply_censoring, fit_replicate, generate_dataset, SimFitConfig, SimScenario,
};

const REPS: usize = 8;

fn replicate_fits(c: &mut Criterion) {
    let scenario = SimScenario::new(0.1, 0.5, (1.0, 1.0));
    let data: Vec<_> = (0..REPS)
        .map(|r| {
            apply_censoring(
                &generate_dataset(&scenario, scenario.rep_seed(r)).unwrap(),
                0.1,
            )
            .unwrap()
        })
        .collect();
    let cfg = SimFitConfig {
        chains: ChainConfig::with_lengths(2, 500, 500, 1),
        rhat_threshold: 1.1,
    };
    let fit = |r: usize| fit_replicate(&data[r], KernelKind::Sep, 0.5, &cfg, r).censored_share;

    let mut group = c.benchmark_group("replicate_fits");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", REPS), |b| {
        b.iter(|| map_indexed_sequential(REPS, fit))
    });
    group.bench_function(BenchmarkId::new("parallel", REPS), |b| {
        b.iter(|| map_indexed(REPS, fit))
    });
    group.finish();
}

criterion_group!(benches, replicate_fits);
criterion_main!(benches);
