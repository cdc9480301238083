//! Sample-parallel certification and θ search on a one-thread pool versus
//! the default pool. Build with `--no-default-features` to time the
//! sequential fallback itself.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polystab_core::domain::{Domain, SamplePlan};
use polystab_core::factorization::FactorizationFamily;
use polystab_core::parse_system;
use polystab_core::stability::{certify, search_certificate, SearchOptions};

const EXAMPLE: &str = "x1' = x1^2*x2 + x2 + 2*x1*x2^2\nx2' = -x1 + 3*x1^2*x2 - 2*x1*x2^2";
const CUBIC3: &str = "x1' = -x1 + x2*x3\nx2' = -x2 + x1^2*x3 - x2^3\nx3' = -2*x3 + x1*x2^2";

fn pools() -> Vec<(String, Option<usize>)> {
    let mut out = vec![("default".to_string(), None)];
    if cfg!(feature = "parallel") {
        out.insert(0, ("1-thread".to_string(), Some(1)));
    }
    out
}

#[cfg(feature = "parallel")]
fn on_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap().install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn on_pool<R: Send>(_: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn bench_certify(c: &mut Criterion) {
    let mut group = c.benchmark_group("certify");
    for (name, src) in [("example", EXAMPLE), ("cubic3", CUBIC3)] {
        let fam = FactorizationFamily::build(&parse_system(src).unwrap()).unwrap();
        let n = fam.dim();
        let domain = Domain::ball(n, 0.5).unwrap().with_plan(SamplePlan { grid: 21, random: 2048 });
        let theta = vec![0.5; fam.free_dim()];
        for (pool, threads) in pools() {
            group.bench_with_input(BenchmarkId::new(name, &pool), &threads, |b, &t| {
                b.iter(|| on_pool(t, || certify(&fam, black_box(&theta), &domain, 7).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("search");
    group.sample_size(10);
    let fam = FactorizationFamily::build(&parse_system(EXAMPLE).unwrap()).unwrap();
    let domain = Domain::ball(2, 0.5).unwrap();
    let opts = SearchOptions::new(4000, 7);
    for (pool, threads) in pools() {
        group.bench_with_input(BenchmarkId::new("example", &pool), &threads, |b, &t| {
            b.iter(|| on_pool(t, || search_certificate(&fam, &domain, black_box(&opts)).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_certify, bench_search);
criterion_main!(benches);
