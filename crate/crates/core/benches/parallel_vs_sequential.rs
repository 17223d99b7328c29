use std::hint::black_box;

use codec_probe::assoc::accumulate_aligned;
use codec_probe::mi::{mi_report, ClubConfig, MiReportConfig};
use codec_probe::par::Parallelism;
use codec_probe::projection::{pairwise_affinities, tsne, Points, TsneConfig};
use codec_probe::synth::{generate_corpus, synthetic_codebook, GroundTruthSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn cooccurrence(c: &mut Criterion) {
    let g = generate_corpus(&GroundTruthSpec::speechtokenizer_like(), 2000, Parallelism::Parallel).unwrap();
    let frames = g.corpus.align_all(Parallelism::Parallel).unwrap();
    let mut group = c.benchmark_group("cooccurrence");
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::new(name, frames.len()), |b| {
            b.iter(|| accumulate_aligned(black_box(&frames), 0, 100, 256, par).unwrap())
        });
    }
    group.finish();
}

fn projection(c: &mut Criterion) {
    let g = generate_corpus(&GroundTruthSpec::speechtokenizer_like(), 1, Parallelism::Parallel).unwrap();
    let table = synthetic_codebook(&g.truth, 16).unwrap();
    let scale = table.scale(0).unwrap();
    let x = Points::new(scale.rows, scale.dim, scale.values.iter().map(|&v| v as f64).collect()).unwrap();
    let cfg = TsneConfig { iterations: 300, ..TsneConfig::default() };
    let mut group = c.benchmark_group("tsne");
    group.sample_size(10);
    for (name, par) in MODES {
        group.bench_function(BenchmarkId::new("affinities", name), |b| {
            b.iter(|| pairwise_affinities(black_box(&x), 30.0, par).unwrap())
        });
        group.bench_function(BenchmarkId::new("exact_300_iterations", name), |b| {
            b.iter(|| tsne(black_box(&x), &cfg, par).unwrap())
        });
    }
    group.finish();
}

fn mi_cells(c: &mut Criterion) {
    let g = generate_corpus(&GroundTruthSpec::speechtokenizer_like(), 100, Parallelism::Parallel).unwrap();
    let cfg = MiReportConfig {
        club: ClubConfig { epochs: 2, ..ClubConfig::default() },
        max_samples: 2000,
        ..MiReportConfig::default()
    };
    let mut group = c.benchmark_group("mi_report");
    group.sample_size(10);
    for (name, par) in MODES {
        group.bench_function(name, |b| b.iter(|| mi_report(black_box(&g.corpus), &cfg, par).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, cooccurrence, projection, mi_cells);
criterion_main!(benches);
