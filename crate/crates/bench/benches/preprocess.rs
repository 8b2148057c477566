use criterion::{black_box, criterion_group, criterion_main, Criterion};
use sidesense_bench::random_cloud;
use sidesense_core::preprocess::{ahc_upsample, kmeans, preprocess_cloud, PreprocessConfig};
use sidesense_core::rng::stream;

fn clustering(c: &mut Criterion) {
    let frame: Vec<[f64; 3]> = random_cloud(40, 1, 1).points.iter().map(|p| p.xyz()).collect();
    c.bench_function("kmeans/40_to_8", |b| {
        b.iter(|| kmeans(black_box(&frame), 8, &mut stream(&[2])).unwrap())
    });
    let small: Vec<[f64; 3]> = frame[..8].to_vec();
    c.bench_function("kmeans/8_to_4", |b| {
        b.iter(|| kmeans(black_box(&small), 4, &mut stream(&[2])).unwrap())
    });
    c.bench_function("ahc/8_to_32", |b| b.iter(|| ahc_upsample(black_box(&small), 32)));
    let cloud = random_cloud(900, 30, 4);
    let cfg = PreprocessConfig::default();
    c.bench_function("preprocess_cloud/900_points", |b| {
        b.iter(|| preprocess_cloud(black_box(&cloud), &cfg, 5).unwrap())
    });
}

criterion_group!(benches, clustering);
criterion_main!(benches);
