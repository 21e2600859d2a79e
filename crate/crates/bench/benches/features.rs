use criterion::{criterion_group, criterion_main, Criterion};
use modspec::dsp::segment_utterance;
use modspec::{ExtractMode, FeatureConfig, FeatureExtractor, MaskSpec};
use modspec_bench::speech;
use std::hint::black_box;

fn window(c: &mut Criterion) {
    let extractor = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let segments = segment_utterance(&speech(1.5)).unwrap();
    c.bench_function("window_spectrum", |b| {
        b.iter(|| extractor.window_spectrum(black_box(&segments[0])).unwrap())
    });
}

fn utterance(c: &mut Criterion) {
    let extractor = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let audio = speech(4.0);
    let mask = MaskSpec::new(2.0, 8.0).unwrap();
    let mut group = c.benchmark_group("extract");
    group.sample_size(20);
    group.bench_function("utterance_4s", |b| {
        b.iter(|| extractor.extract(black_box(&audio), Some(&mask), 3, ExtractMode::Training).unwrap())
    });
    group.finish();
}

criterion_group!(benches, window, utterance);
criterion_main!(benches);
