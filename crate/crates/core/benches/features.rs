use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rotsig::exec::Execution;
use rotsig::features::{b_tensor, feature_matrix_with, sample_random_weights, FeatureConfig, PointCloud, RadialBasis};
use rotsig::timing::synthetic_cloud;

fn config() -> FeatureConfig {
    FeatureConfig {
        band_limit: 5,
        radial: RadialBasis::qm7(),
        weight_sigma: 2.0,
        n_features: 64,
        seed: 1,
        normalize_mass: false,
    }
}

fn feature_matrix(c: &mut Criterion) {
    let rfs = sample_random_weights(&config()).unwrap();
    let clouds: Vec<PointCloud> = (0..64)
        .map(|i| PointCloud::new(synthetic_cloud(23, 3.0, i), false).unwrap())
        .collect();
    let mut group = c.benchmark_group("feature_matrix_64x23");
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| feature_matrix_with(exec, &clouds, &rfs).unwrap())
        });
    }
    group.finish();
}

fn tensor_scaling(c: &mut Criterion) {
    let basis = RadialBasis::qm7();
    let mut group = c.benchmark_group("b_tensor");
    for n in [64usize, 128, 256] {
        let cloud = PointCloud::new(synthetic_cloud(n, 3.0, n as u64), false).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &cloud, |b, cloud| {
            b.iter(|| b_tensor(cloud, &basis, 5).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, feature_matrix, tensor_scaling);
criterion_main!(benches);
