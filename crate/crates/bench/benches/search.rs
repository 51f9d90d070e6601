use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dpreg::matching::{feature_nn_search, feature_nn_search_brute, mutual_k_correspondences};
use dpreg::spatial::KdTree;
use dpreg::DescriptorSource;
use dpreg_bench::{fragment_pair, random_descriptors};
use std::hint::black_box;

fn spatial(c: &mut Criterion) {
    let pair = fragment_pair(5000, 4);
    let tree = KdTree::from_points(&pair.cloud_a.points);
    c.bench_function("kd-tree build 5000 points", |b| b.iter(|| KdTree::from_points(black_box(&pair.cloud_a.points))));
    c.bench_function("kd-tree 16-nn x 1000 queries", |b| {
        b.iter(|| {
            pair.cloud_b.points[..1000]
                .iter()
                .map(|p| tree.knn(p.as_slice(), 16).len())
                .sum::<usize>()
        })
    });
}

fn descriptors(c: &mut Criterion) {
    let mut g = c.benchmark_group("feature search, 64-d");
    for n in [300usize, 1000] {
        let a = random_descriptors(n, 64, 5);
        let b = random_descriptors(n, 64, 6);
        g.bench_with_input(BenchmarkId::new("kd-tree 4-nn", n), &n, |bench, _| {
            bench.iter(|| feature_nn_search(&a, &b, 4).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("brute 4-nn", n), &n, |bench, _| {
            bench.iter(|| feature_nn_search_brute(&a, &b, 4).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("mutual-1", n), &n, |bench, _| {
            bench.iter(|| mutual_k_correspondences(&a, &b, 1, DescriptorSource::PpfInvariant).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, spatial, descriptors);
criterion_main!(benches);
