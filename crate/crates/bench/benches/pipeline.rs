use criterion::{criterion_group, criterion_main, Criterion};
use inpaint_bench::PipelineFixture;

fn pipeline(c: &mut Criterion) {
    let fx = PipelineFixture::new(64).unwrap();
    let mut group = c.benchmark_group("pipeline_64");
    group.sample_size(10);
    group.bench_function("coarse", |b| b.iter(|| fx.model.coarse(&fx.image, &fx.mask).unwrap()));
    let coarse = fx.model.coarse(&fx.image, &fx.mask).unwrap();
    group.bench_function("refine", |b| {
        b.iter(|| fx.model.refine(&coarse.features, &fx.labels, &fx.image, &fx.mask).unwrap())
    });
    group.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
