use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use geopg::estimators::{eval_pg_batch, GradientKind};
use geopg::fixtures;
use geopg::par::Execution;
use geopg::policy::{TabularSoftmax, Theta};
use geopg::rng::StreamKey;

fn batch(c: &mut Criterion) {
    let mdp = fixtures::ring3();
    let policy = TabularSoftmax::for_mdp(&mdp);
    let theta = Theta::from_fn(6, |i, _| 0.3 * i as f64 - 0.7);
    let mut group = c.benchmark_group("eval_pg_batch");
    for n in [1_000usize, 10_000] {
        for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, &n| {
                b.iter(|| {
                    eval_pg_batch(GradientKind::AdvTd, &mdp, &policy, &theta, StreamKey::new(7, 0, 0), n, exec).unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
