use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lorbundle::geodesics::{completeness_probe, Tolerances};
use lorbundle::par::Exec;
use lorbundle::presets::{build_preset, Params};

fn probe(c: &mut Criterion) {
    let cfg = build_preset("type4-complete", &Params::new()).expect("preset builds");
    let mut group = c.benchmark_group("completeness_probe");
    group.sample_size(10);
    for (label, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        group.bench_with_input(BenchmarkId::new(label, exec.threads()), &exec, |b, &exec| {
            b.iter(|| completeness_probe(&cfg, 8, 20.0, 7, &Tolerances::probe(), exec).expect("probe runs"))
        });
    }
    group.finish();
}

criterion_group!(benches, probe);
criterion_main!(benches);
