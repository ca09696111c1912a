use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use triage_bench::fixture;
use triage_core::eval::{diversity, run_benchmark, InjectionConfig, MetricConfig, TruthSource};
use triage_core::pipeline::{run_simulation, Generator, GeneratorConfig, PipelineConfig, Strategy};
use triage_core::{borda_merge, detect_all_classes, rank_baseline, DetectionConfig, Method};

fn detection(c: &mut Criterion) {
    let mut group = c.benchmark_group("detect_all_classes");
    for per_class in [100, 400] {
        let (corpus, embedders) = fixture(10, per_class);
        for method in [Method::Average, Method::Sif, Method::Bow] {
            let cfg = DetectionConfig {
                method: method.clone(),
                ..DetectionConfig::default()
            };
            group.bench_with_input(
                BenchmarkId::new(method.to_string(), per_class),
                &cfg,
                |b, cfg| {
                    b.iter(|| detect_all_classes(black_box(&corpus), &embedders, cfg).unwrap())
                },
            );
        }
    }
    group.finish();
}

fn borda(c: &mut Criterion) {
    let (corpus, _) = fixture(1, 1000);
    let utts = corpus.class("intent00").unwrap();
    let lists: Vec<_> = (0..3)
        .map(|seed| rank_baseline(utts, &Method::Random, seed, "intent00").unwrap())
        .collect();
    c.bench_function("borda_merge/3x1000", |b| {
        b.iter(|| borda_merge(black_box(&lists)).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let cfg = MetricConfig::default();
    let mut group = c.benchmark_group("diversity");
    for per_class in [50, 200] {
        let (corpus, _) = fixture(10, per_class);
        group.bench_with_input(
            BenchmarkId::from_parameter(per_class),
            &corpus,
            |b, corpus| b.iter(|| diversity(black_box(corpus), &cfg).unwrap()),
        );
    }
    group.finish();
}

fn benchmark_table(c: &mut Criterion) {
    let (corpus, embedders) = fixture(10, 100);
    let methods = Method::parse_list("random,bow,average,sif,borda:average+sif").unwrap();
    let mut group = c.benchmark_group("run_benchmark");
    group.sample_size(20);
    group.bench_function("toy_10x100", |b| {
        b.iter(|| {
            run_benchmark(
                black_box(&corpus),
                &methods,
                TruthSource::Inject(InjectionConfig { p: 0.04, seed: 0 }),
                &DetectionConfig::default(),
                &embedders,
            )
            .unwrap()
        })
    });
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let generator = Generator::new(GeneratorConfig::default()).unwrap();
    let cfg = PipelineConfig::default();
    let mut group = c.benchmark_group("run_simulation");
    group.sample_size(10);
    group.bench_function("default_all_strategies", |b| {
        b.iter(|| {
            run_simulation(
                &cfg,
                &generator,
                &Strategy::ALL,
                0.85,
                &MetricConfig::default(),
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    detection,
    borda,
    metrics,
    benchmark_table,
    simulation
);
criterion_main!(benches);
