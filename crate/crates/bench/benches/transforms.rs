use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use commexp::simplex::{entmax, entmax_bisect, entmax_jvp, softmax, sparsemax, sparsemax_jvp};
use commexp::ScoreVector;

fn scores(n: usize) -> ScoreVector {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    ScoreVector::new((0..n).map(|_| rng.gen_range(-4.0..4.0)).collect())
}

fn heads(c: &mut Criterion) {
    let mut group = c.benchmark_group("heads");
    for n in [16, 128, 1024] {
        let s = scores(n);
        group.bench_with_input(BenchmarkId::new("softmax", n), &s, |b, s| {
            b.iter(|| softmax(black_box(s)))
        });
        group.bench_with_input(BenchmarkId::new("sparsemax", n), &s, |b, s| {
            b.iter(|| sparsemax(black_box(s)))
        });
        group.bench_with_input(BenchmarkId::new("entmax15", n), &s, |b, s| {
            b.iter(|| entmax(black_box(s), 1.5))
        });
        group.bench_with_input(BenchmarkId::new("entmax15_bisect", n), &s, |b, s| {
            b.iter(|| entmax_bisect(black_box(s), 1.5))
        });
    }
    group.finish();
}

fn jvps(c: &mut Criterion) {
    let s = scores(256);
    let dir: Vec<f64> = (0..256).map(|i| (i as f64).sin()).collect();
    let sp = sparsemax(&s).unwrap();
    let en = entmax(&s, 1.5).unwrap();
    c.bench_function("sparsemax_jvp 256", |b| {
        b.iter(|| sparsemax_jvp(black_box(&sp), black_box(&dir)))
    });
    c.bench_function("entmax15_jvp 256", |b| {
        b.iter(|| entmax_jvp(black_box(&en), black_box(&dir), 1.5))
    });
}

criterion_group!(benches, heads, jvps);
criterion_main!(benches);
