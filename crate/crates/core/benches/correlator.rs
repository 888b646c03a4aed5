use std::time::Duration;

use bunchlab::correlator::{correlate_timestamps, CorrelatorMode};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poisson(rng: &mut ChaCha8Rng, n: usize, mean_gap_ps: f64) -> Vec<u64> {
    let mut t = 0u64;
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            t += (-(1.0 - u).ln() * mean_gap_ps).round() as u64;
            t
        })
        .collect()
}

fn full_mode(c: &mut Criterion) {
    let mut group = c.benchmark_group("correlate_16ps_50ns");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // 1 MHz per channel: about 100 pairs in the ±50 ns window per 10⁶ starts.
    for &n in &[100_000usize, 1_000_000] {
        let a = poisson(&mut rng, n, 1e6);
        let b = poisson(&mut rng, n, 1e6);
        group.throughput(Throughput::Elements(2 * n as u64));
        for chunks in [1usize, 8] {
            group.bench_with_input(BenchmarkId::new(format!("chunks{chunks}"), n), &(&a, &b), |bench, (a, b)| {
                bench.iter(|| correlate_timestamps(a, b, 16e-12, 50e-9, CorrelatorMode::Full, chunks).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, full_mode);
criterion_main!(benches);
