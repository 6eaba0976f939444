use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use riccati_bench::{problem, HORIZONS};
use riccati_core::condense::{condense_batch, Batch};
use riccati_core::{build_tree, solve_serial, ParallelConfig, ParallelRiccati};
use std::hint::black_box;

fn serial_vs_parallel(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    for n in HORIZONS {
        let p = problem(n);
        group.bench_with_input(BenchmarkId::new("serial", n), &p, |b, p| {
            b.iter(|| solve_serial(black_box(p)).unwrap())
        });
        for ns in [2, 3] {
            let solver = ParallelRiccati::new(ParallelConfig {
                ns,
                ..ParallelConfig::default()
            })
            .unwrap();
            group.bench_with_input(
                BenchmarkId::new(format!("parallel_ns{ns}"), n),
                &p,
                |b, p| b.iter(|| solver.solve(black_box(p)).unwrap()),
            );
        }
    }
    group.finish();
}

fn tree_phases(c: &mut Criterion) {
    let p = problem(512);
    c.bench_function("condense_batch_ns2", |b| {
        b.iter(|| condense_batch(black_box(&Batch::preliminary(&p.stages[..2]))).unwrap())
    });
    c.bench_function("build_tree_512", |b| {
        b.iter(|| build_tree(black_box(&p), 2, 1).unwrap().depth())
    });
}

criterion_group!(benches, serial_vs_parallel, tree_phases);
criterion_main!(benches);
