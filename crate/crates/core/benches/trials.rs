use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ofa_core::harness::{default_configs, run_experiment};
use ofa_core::parallel::Execution;

fn trial_fanout(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    for (name, mut cfg) in default_configs() {
        if !matches!(name, "clustered" | "zone_collapse") {
            continue;
        }
        cfg.trials = 64;
        for (mode_name, mode) in [
            ("sequential", Execution::Sequential),
            ("parallel", Execution::Parallel),
        ] {
            group.bench_with_input(BenchmarkId::new(mode_name, name), &cfg, |b, cfg| {
                b.iter(|| run_experiment(cfg, Path::new("."), mode).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, trial_fanout);
criterion_main!(benches);
