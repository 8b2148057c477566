use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use sidesense_bench::random_cloud;
use sidesense_core::graph::{build_temporal_graph, GraphConfig};

fn graph_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("temporal_graph");
    for n in [128usize, 512, 1024] {
        let cloud = random_cloud(n, 32, n as u64);
        let cfg = GraphConfig { k: 16, frame_scale: 1.0 };
        group.bench_with_input(BenchmarkId::from_parameter(n), &cloud, |b, cloud| {
            b.iter(|| build_temporal_graph(black_box(cloud), &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, graph_build);
criterion_main!(benches);
