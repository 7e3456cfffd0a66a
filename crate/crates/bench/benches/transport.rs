use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvlab_core::metrics::{hungarian, wasserstein_lp, wasserstein_sorted, DiscreteMeasure};
use mvlab_core::StreamKey;
use rand::Rng;

fn points(n: usize, stream: u64) -> Vec<f64> {
    let mut rng = StreamKey::noise(9, stream).rng();
    (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
}

fn transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("wasserstein");
    for n in [16usize, 64, 128] {
        let (xs, ys) = (points(n, 0), points(n, 1));
        let (mu, nu) = (DiscreteMeasure::uniform(1, xs.clone()).unwrap(), DiscreteMeasure::uniform(1, ys.clone()).unwrap());
        group.bench_with_input(BenchmarkId::new("sorted", n), &n, |b, _| b.iter(|| wasserstein_sorted(&xs, &ys, 2.0).unwrap()));
        group.bench_with_input(BenchmarkId::new("lp", n), &n, |b, _| b.iter(|| wasserstein_lp(&mu, &nu, 2.0, 1 << 20).unwrap()));
    }
    let n = 100_000;
    let (xs, ys) = (points(n, 2), points(n, 3));
    group.bench_function("sorted/100000", |b| b.iter(|| wasserstein_sorted(&xs, &ys, 2.0).unwrap()));
    group.finish();

    let mut group = c.benchmark_group("hungarian");
    for n in [32usize, 128, 256] {
        let (xs, ys) = (points(n, 4), points(n, 5));
        let cost: Vec<f64> = xs.iter().flat_map(|x| ys.iter().map(move |y| (x - y).powi(2))).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| hungarian(n, &cost)));
    }
    group.finish();
}

criterion_group!(benches, transport);
criterion_main!(benches);
