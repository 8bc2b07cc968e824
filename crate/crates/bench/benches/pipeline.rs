use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use sg3d_bench::{graph, instances, mask_frame, synthetic_scene_dir};
use sg3d_core::dataset::{load_manifest, stream_chunks};
use sg3d_core::fusion::{associate_and_merge, ingest_chunk, FusionConfig, IngestOptions};
use sg3d_core::geometry::backproject_mask;
use sg3d_core::perception::ReplayBackend;
use sg3d_core::pruning::{prune, PruneQuery};
use sg3d_core::SceneGraph3D;

fn backprojection(c: &mut Criterion) {
    let mut group = c.benchmark_group("backproject_mask");
    for (w, h) in [(320, 240), (640, 480), (1280, 720)] {
        let (mask, depth, intr) = mask_frame(w, h, 0.25, 7);
        group.throughput(Throughput::Elements(mask.population() as u64));
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{w}x{h}")),
            &(),
            |b, _| {
                b.iter(|| {
                    backproject_mask(black_box(&mask), black_box(&depth), black_box(&intr)).unwrap()
                })
            },
        );
    }
    group.finish();
}

fn merging(c: &mut Criterion) {
    let mut group = c.benchmark_group("associate_and_merge");
    let cfg = FusionConfig::default();
    for nodes in [100, 1000, 5000] {
        let base = graph(nodes, 10.0, 1);
        let batch = instances(50, 10.0, 2);
        group.throughput(Throughput::Elements(batch.len() as u64));
        group.bench_with_input(BenchmarkId::new("nodes", nodes), &(), |b, _| {
            b.iter_batched(
                || base.clone(),
                |mut g| associate_and_merge(&mut g, black_box(&batch), &cfg),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn pruning(c: &mut Criterion) {
    let mut group = c.benchmark_group("prune");
    for nodes in [100, 1000, 5000] {
        let g = graph(nodes, 10.0, 3);
        let q = PruneQuery::new("go near the sofa");
        group.bench_with_input(BenchmarkId::new("nodes", nodes), &(), |b, _| {
            b.iter(|| prune(black_box(&g), black_box(&q), None).unwrap())
        });
    }
    group.finish();
}

fn synthetic_ingest(c: &mut Criterion) {
    let dir = synthetic_scene_dir();
    let manifest = load_manifest(&dir.join("scene")).unwrap();
    let chunks: Vec<_> = stream_chunks(&manifest, 10)
        .unwrap()
        .map(Result::unwrap)
        .collect();
    let backend = ReplayBackend::new(dir.join("fixtures")).unwrap();
    let opts = IngestOptions::default();
    let mut group = c.benchmark_group("ingest");
    group.sample_size(10);
    group.bench_function("synthetic_scene_3_chunks", |b| {
        b.iter(|| {
            let mut g = SceneGraph3D::new(manifest.scene_id.clone());
            for chunk in &chunks {
                ingest_chunk(&mut g, chunk.chunk_id, &chunk.frames, &backend, &opts).unwrap();
            }
            g
        })
    });
    group.finish();
}

criterion_group!(benches, backprojection, merging, pruning, synthetic_ingest);
criterion_main!(benches);
