use criterion::{criterion_group, criterion_main, Criterion};
use lls_qaoa::{optimize, CobylaSettings, OptimizerSettings};
use lls_qaoa_bench::moderate;

fn single_start(c: &mut Criterion) {
    let p = moderate(2);
    let s = OptimizerSettings {
        cobyla: CobylaSettings {
            max_evals: 800,
            ..CobylaSettings::default()
        },
        n_starts: 1,
        seed: 0,
        start_window_s: None,
    };
    let mut g = c.benchmark_group("optimizer");
    g.sample_size(20);
    g.bench_function("two_layer_single_start", |b| b.iter(|| optimize(&p, &s).unwrap()));
    g.finish();
}

criterion_group!(benches, single_start);
criterion_main!(benches);
