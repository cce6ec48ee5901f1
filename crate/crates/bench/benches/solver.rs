use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dualxda::synth::{gaussian_blobs, BlobSpec};
use dualxda::{solve, SolverOptions};

fn solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    for &n in &[500usize, 2000] {
        let cache = gaussian_blobs(&BlobSpec { n, dim: 64, classes: 10, separation: 3.0, ..BlobSpec::default() }, 7);
        let opts = SolverOptions { c: 1e-2, ..SolverOptions::default() };
        group.bench_with_input(BenchmarkId::from_parameter(n), &cache, |b, cache| b.iter(|| solve(cache, &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, solver);
criterion_main!(benches);
